#include "gpsgen/sds.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gpsgen/checkpoint.hpp"
#include "gpsgen/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace gpsgen::sds {

using ag::Var;

json SdsConfig::to_json() const {
    json j;
    j["omega"] = omega;
    j["steps"] = steps;
    j["lr"] = lr;
    j["t_start"] = {t_start_min, t_start_max};
    j["t_end"] = {t_end_min, t_end_max};
    j["elev_min_deg"] = elev_min_deg;
    j["elev_max_deg"] = elev_max_deg;
    j["camera_radius"] = camera_radius;
    j["fov_deg"] = fov_deg;
    j["render_size"] = render_size;
    j["samples_per_ray"] = samples_per_ray;
    j["lambda_orient"] = lambda_orient;
    j["lambda_opacity"] = lambda_opacity;
    j["orient_stride"] = orient_stride;
    j["seed"] = seed;
    j["snapshot_every"] = snapshot_every;
    j["use_angle_condition"] = use_angle_condition;
    j["field"] = {{"width", field.width},
                  {"trunk_layers", field.trunk_layers},
                  {"frequencies", field.frequencies},
                  {"bound", field.bound},
                  {"density_bias", field.density_bias}};
    return j;
}

SdsConfig SdsConfig::from_json(const json& j) {
    SdsConfig c;
    c.omega = j.at("omega");
    c.steps = j.at("steps");
    c.lr = j.at("lr");
    c.t_start_min = j.at("t_start")[0];
    c.t_start_max = j.at("t_start")[1];
    c.t_end_min = j.at("t_end")[0];
    c.t_end_max = j.at("t_end")[1];
    c.elev_min_deg = j.at("elev_min_deg");
    c.elev_max_deg = j.at("elev_max_deg");
    c.camera_radius = j.at("camera_radius");
    c.fov_deg = j.at("fov_deg");
    c.render_size = j.at("render_size");
    c.samples_per_ray = j.at("samples_per_ray");
    c.lambda_orient = j.at("lambda_orient");
    c.lambda_opacity = j.at("lambda_opacity");
    c.orient_stride = j.at("orient_stride");
    c.seed = j.at("seed");
    c.snapshot_every = j.at("snapshot_every");
    c.use_angle_condition = j.at("use_angle_condition");
    c.field.width = j.at("field").at("width");
    c.field.trunk_layers = j.at("field").at("trunk_layers");
    c.field.frequencies = j.at("field").at("frequencies");
    c.field.bound = j.at("field").at("bound");
    c.field.density_bias = j.at("field").at("density_bias");
    return c;
}

std::pair<float, float> anneal_interval(int64_t step, int64_t total, std::pair<float, float> start,
                                        std::pair<float, float> end) {
    if (step < 0 || step > total || total < 1)
        throw std::invalid_argument("anneal_interval: step out of range");
    if (step == 0) return start;
    if (step == total) return end;  // exact endpoints, no lerp rounding
    float f = static_cast<float>(step) / static_cast<float>(total);
    float lo = start.first + (end.first - start.first) * f;
    float hi = start.second + (end.second - start.second) * f;
    return {lo, hi};
}

nerf::CameraPose sample_camera(Rng& rng, const SdsConfig& cfg) {
    nerf::CameraPose p;
    p.azimuth_deg = 180.0 - 360.0 * rng.uniform();  // (-180, 180]
    p.elevation_deg = rng.uniform(cfg.elev_min_deg, cfg.elev_max_deg);
    p.radius = cfg.camera_radius;
    p.fov_deg = cfg.fov_deg;
    p.resolution = cfg.render_size;
    return p;
}

Tensor cfg_3d(const Tensor& eps_cond, const Tensor& eps_uncond, float omega) {
    if (!eps_cond.same_shape(eps_uncond)) throw std::invalid_argument("cfg_3d: shape mismatch");
    Tensor out(eps_cond.shape);
    for (int64_t i = 0; i < out.size(); ++i)
        out[i] = (1.0f + omega) * eps_cond[i] - omega * eps_uncond[i];
    return out;
}

namespace {

/// Render resolution -> denoiser resolution by repeated 2x pooling/upsampling.
Var resize_to(Var x, int target) {
    int cur = x->value.dim(1);
    while (cur > target) {
        if (cur % 2 != 0) throw std::invalid_argument("sds: render size not a 2^k multiple of model size");
        x = ag::avgpool2x(x);
        cur /= 2;
    }
    while (cur < target) {
        x = ag::upsample2x(x);
        cur *= 2;
    }
    if (cur != target) throw std::invalid_argument("sds: incompatible render/model sizes");
    return x;
}

void check_finite_grads(const nn::ParamStore& ps, int64_t step) {
    for (const auto& [name, v] : ps.entries())
        for (int64_t i = 0; i < v->grad.size(); ++i)
            if (!std::isfinite(v->grad[i]))
                throw std::runtime_error("sds_step: non-finite gradient in " + name + " at step " +
                                         std::to_string(step));
}

}  // namespace

StepStats sds_step(SdsState& state, const Denoiser& model, const std::vector<int>& caption_ids,
                   const NoiseSchedule& schedule, Rng& rng) {
    const SdsConfig& cfg = state.cfg;
    nerf::CameraPose pose = sample_camera(rng, cfg);
    auto [tmin, tmax] = anneal_interval(state.step, cfg.steps, {cfg.t_start_min, cfg.t_start_max},
                                        {cfg.t_end_min, cfg.t_end_max});
    float u = static_cast<float>(rng.uniform(tmin, tmax));
    int t = std::clamp(static_cast<int>(std::lround(u * (schedule.T - 1))), 0, schedule.T - 1);

    nerf::RenderOutput out = nerf::render(state.field, pose, cfg.samples_per_ray);
    int res = cfg.render_size;
    Var x = ag::reshape(out.rgb, {1, res, res, 3});
    x = resize_to(x, model.config().image_size);
    x = ag::add_scalar(ag::scale(x, 2.0f), -1.0f);  // [0,1] -> [-1,1]

    int64_t numel = x->value.size();
    Tensor eps(x->value.shape);
    for (int64_t i = 0; i < numel; ++i) eps[i] = static_cast<float>(rng.normal());

    float sq_abar = static_cast<float>(std::sqrt(schedule.abar[static_cast<size_t>(t)]));
    float sig = static_cast<float>(schedule.sigma[static_cast<size_t>(t)]);
    Tensor z_t(x->value.shape);
    for (int64_t i = 0; i < numel; ++i) z_t[i] = sq_abar * x->value[i] + sig * eps[i];

    // frozen denoiser, evaluated value-only (stop-gradient contract)
    Var cond = cfg.use_angle_condition
                   ? ag::concat_rows({model.tokens_text(caption_ids),
                                      model.tokens_angle(geo::discretize_angle(
                                          geo::Azimuth{pose.azimuth_deg}))})
                   : model.tokens_text_nulled(caption_ids);
    Tensor z2({2, z_t.dim(1), z_t.dim(2), 3});
    std::copy(z_t.data.begin(), z_t.data.end(), z2.data.begin());
    std::copy(z_t.data.begin(), z_t.data.end(), z2.data.begin() + numel);
    Tensor both = model.predict(z2, {cond, model.tokens_null()}, {t, t});
    Tensor eps_cond(z_t.shape), eps_uncond(z_t.shape);
    std::copy(both.data.begin(), both.data.begin() + numel, eps_cond.data.begin());
    std::copy(both.data.begin() + numel, both.data.end(), eps_uncond.data.begin());
    Tensor eps_hat = cfg_3d(eps_cond, eps_uncond, cfg.omega);

    Tensor residual(z_t.shape);
    for (int64_t i = 0; i < numel; ++i) residual[i] = eps_hat[i] - eps[i];
    float wt = sig * sig;  // omega(t) = sigma_t^2

    Var loss_sds = ag::scale(ag::sum_all(ag::mul(ag::constant(std::move(residual)), x)),
                             wt / static_cast<float>(numel));
    Var loss_orient = nerf::orientation_reg(state.field, out, cfg.orient_stride);
    Var loss_opacity = nerf::opacity_reg(out);
    Var loss = ag::add(loss_sds, ag::add(ag::scale(loss_orient, cfg.lambda_orient),
                                         ag::scale(loss_opacity, cfg.lambda_opacity)));

    state.opt.zero_grad();
    ag::backward(loss);
    if (!std::isfinite(loss->value[0]))
        throw std::runtime_error("sds_step: non-finite loss at step " + std::to_string(state.step));
    check_finite_grads(state.field.params(), state.step);
    state.opt.step();
    ++state.step;

    StepStats s;
    s.sds_loss = loss_sds->value[0];
    s.orient_loss = loss_orient->value[0];
    s.opacity_loss = loss_opacity->value[0];
    s.t = t;
    return s;
}

namespace {

void write_turntable(const nerf::RadianceField& field, const SdsConfig& cfg,
                     const std::string& dir) {
    fs::create_directories(dir);
    ag::NoGradGuard ng;
    for (int k = 0; k < 8; ++k) {
        nerf::CameraPose p;
        p.azimuth_deg = -180.0 + 45.0 * k;
        p.elevation_deg = -15.0;
        p.radius = cfg.camera_radius;
        p.fov_deg = cfg.fov_deg;
        p.resolution = cfg.render_size;
        nerf::RenderOutput out = nerf::render(field, p, cfg.samples_per_ray);
        write_png((fs::path(dir) / ("view_" + std::to_string(k) + ".png")).string(), out.image());
    }
}

/// Consume exactly the RNG draws one sds_step makes (deterministic resume).
void replay_step(const SdsConfig& cfg, int model_size, Rng& rng) {
    sample_camera(rng, cfg);
    rng.uniform();
    int64_t numel = static_cast<int64_t>(model_size) * model_size * 3;
    for (int64_t i = 0; i < numel; ++i) rng.normal();
}

}  // namespace

DistillResult distill(const std::string& model_checkpoint, const std::string& dataset_dir,
                      const SdsConfig& cfg_in, const std::string& run_dir,
                      const std::string& resume_from) {
    auto ds = worldgen::Dataset::open(dataset_dir);
    if (ds.spec.mode != worldgen::Mode::Landmark)
        throw std::invalid_argument("distill: requires a landmark dataset");
    std::vector<int> caption_ids =
        diffusion::caption_to_ids(ds.metas.at(0).caption, ds.spec.vocabulary);

    CheckpointMeta model_meta = peek_checkpoint(model_checkpoint);
    diffusion::TrainConfig tc = diffusion::TrainConfig::from_json(model_meta.config);
    if (tc.model.cond_mode != diffusion::CondMode::Angle)
        throw std::invalid_argument("distill: checkpoint is not an angle-conditioned model");
    Denoiser model(tc.model, 0);
    load_checkpoint(model_checkpoint, model.params());
    uint64_t frozen_hash = param_hash(model.params());
    NoiseSchedule schedule =
        diffusion::build_schedule(tc.T, diffusion::schedule_kind_from_name(tc.schedule));

    SdsConfig cfg = cfg_in;
    cfg.field.bound = worldgen::landmark_scene_bound(ds.spec);
    cfg.camera_radius = ds.spec.camera_radius;
    cfg.fov_deg = ds.spec.fov_deg;

    fs::create_directories(run_dir);
    json cfg_json = cfg.to_json();
    {
        std::ofstream f(fs::path(run_dir) / "config.json", std::ios::trunc);
        f << cfg_json.dump(2) << "\n";
    }

    SdsState state(cfg);
    int64_t start_step = 0;
    if (!resume_from.empty()) {
        CheckpointMeta meta = load_checkpoint(resume_from, state.field.params(), &state.opt);
        // extending a run is legitimate, so the step budget is excluded from
        // the compatibility check; everything else must match exactly
        nlohmann::json was = meta.config, now = cfg_json;
        was.erase("steps");
        now.erase("steps");
        if (was != now)
            throw CheckpointError("distill: resume config does not match checkpoint config");
        start_step = meta.step;
        state.step = start_step;
    }

    CheckpointMeta meta;
    meta.config = cfg_json;
    meta.schedule = model_meta.schedule;

    std::ofstream loss_log(fs::path(run_dir) / "loss.csv",
                           start_step > 0 ? std::ios::app : std::ios::trunc);
    if (start_step == 0) loss_log << "step,t,sds,orient,opacity\n";

    Rng rng(cfg.seed ^ 0x5d5ca11);
    for (int64_t i = 0; i < start_step; ++i) replay_step(cfg, model.config().image_size, rng);

    float last_loss = 0.0f;
    for (int64_t step = start_step; step < cfg.steps; ++step) {
        StepStats s = sds_step(state, model, caption_ids, schedule, rng);
        last_loss = s.sds_loss;
        loss_log << step + 1 << "," << s.t << "," << s.sds_loss << "," << s.orient_loss << ","
                 << s.opacity_loss << "\n";
        meta.step = step + 1;
        if (cfg.snapshot_every > 0 && (step + 1) % cfg.snapshot_every == 0 && step + 1 < cfg.steps) {
            save_checkpoint(
                (fs::path(run_dir) / ("ckpt_" + std::to_string(step + 1) + ".ckpt")).string(), meta,
                state.field.params(), &state.opt);
            write_turntable(state.field, cfg,
                            (fs::path(run_dir) / ("turntable_" + std::to_string(step + 1))).string());
        }
    }
    if (param_hash(model.params()) != frozen_hash)
        throw std::logic_error("distill: frozen denoiser parameters changed");

    meta.step = cfg.steps;
    DistillResult r;
    r.final_checkpoint = (fs::path(run_dir) / "final.ckpt").string();
    save_checkpoint(r.final_checkpoint, meta, state.field.params(), &state.opt);
    write_turntable(state.field, cfg, (fs::path(run_dir) / "turntable_final").string());
    nerf::OccupancyGrid grid = nerf::export_density(state.field, 32);
    r.occupancy_path = (fs::path(run_dir) / "occupancy.bin").string();
    nerf::save_occupancy(grid, r.occupancy_path);
    r.final_loss = last_loss;
    return r;
}

}  // namespace gpsgen::sds

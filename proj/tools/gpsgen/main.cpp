// gpsgen: dataset generation, diffusion training, guided sampling, regional
// averaging, score distillation, and evaluation for the GPS-conditioned
// synthetic-world pipeline.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gpsgen/checkpoint.hpp"
#include "gpsgen/hash.hpp"
#include "gpsgen/geoclip.hpp"
#include "gpsgen/sampler.hpp"
#include "gpsgen/sds.hpp"
#include "gpsgen/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gpsgen;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CliError : std::runtime_error {
    int code;
    CliError(int code_, const std::string& msg) : std::runtime_error(msg), code(code_) {}
};

/// Relative paths are resolved against $GPSGEN_OUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
    const char* root = std::getenv("GPSGEN_OUT_ROOT");
    if (root && *root && fs::path(path).is_relative()) return (fs::path(root) / path).string();
    return path;
}

/// Exclusive run-directory guard (stale locks must be removed manually).
struct RunLock {
    fs::path lock;
    explicit RunLock(const std::string& dir) {
        fs::create_directories(dir);
        lock = fs::path(dir) / ".lock";
        std::error_code ec;
        if (fs::exists(lock))
            throw CliError(kExitData, "run directory is locked by another writer: " + dir);
        std::ofstream f(lock, std::ios::trunc);
        if (!f) throw CliError(kExitData, "cannot create lock file in " + dir);
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(lock, ec);
    }
};

void write_json_file(const std::string& path, const json& j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw CliError(kExitData, "cannot write " + path);
    f << j.dump(2) << "\n";
}

std::vector<std::string> split_prompt(const std::string& prompt) {
    std::istringstream ss(prompt);
    std::vector<std::string> toks;
    std::string t;
    while (ss >> t) toks.push_back(t);
    return toks;
}

struct LoadedModel {
    diffusion::TrainConfig cfg;
    std::unique_ptr<diffusion::Denoiser> model;
    diffusion::NoiseSchedule schedule;
};

LoadedModel load_model(const std::string& ckpt) {
    LoadedModel m;
    CheckpointMeta meta = peek_checkpoint(ckpt);
    m.cfg = diffusion::TrainConfig::from_json(meta.config);
    m.model = std::make_unique<diffusion::Denoiser>(m.cfg.model, 0);
    load_checkpoint(ckpt, m.model->params());
    m.schedule =
        diffusion::build_schedule(m.cfg.T, diffusion::schedule_kind_from_name(m.cfg.schedule));
    return m;
}

std::vector<int> prompt_ids(const LoadedModel& m, const std::string& prompt) {
    auto toks = split_prompt(prompt);
    if (toks.empty()) throw CliError(kExitConfig, "empty prompt");
    return diffusion::caption_to_ids(toks, m.cfg.vocabulary);
}

sampler::GuidedNoiseFn geo_only_fn(const diffusion::Denoiser& model, const geo::NormalizedGeo& n,
                                   const sampler::GuidanceConfig& gc) {
    return [&model, n, gc](const Tensor& z, int t) {
        ag::NoGradGuard ng;
        Tensor z2({2, z.dim(0), z.dim(1), 3});
        std::copy(z.data.begin(), z.data.end(), z2.data.begin());
        std::copy(z.data.begin(), z.data.end(), z2.data.begin() + z.size());
        Tensor out = model.predict(z2, {model.tokens_geo(n), model.tokens_null()}, {t, t});
        Tensor c({z.dim(0), z.dim(1), 3}), u({z.dim(0), z.dim(1), 3});
        std::copy(out.data.begin(), out.data.begin() + z.size(), c.data.begin());
        std::copy(out.data.begin() + z.size(), out.data.end(), u.data.begin());
        return sampler::cfg_single(c, u, gc.omega);
    };
}

void save_sample_png(const std::string& path, const Tensor& x, const json& sidecar) {
    write_png(path, diffusion::tensor_to_image(x));
    write_json_file(path + ".json", sidecar);
}

// ---- subcommand implementations ----

int cmd_gen_data(const std::string& mode, int n, uint64_t seed, uint64_t world_seed,
                 int image_size, int grid, const std::string& out_raw) {
    std::string out = resolve_out(out_raw);
    worldgen::WorldSpec spec =
        mode == "city" ? worldgen::WorldSpec::make_city(world_seed, image_size, grid, grid)
                       : worldgen::WorldSpec::make_landmark(world_seed, image_size);
    auto man = worldgen::generate_dataset(spec, n, out, seed);
    json report;
    report["out"] = out;
    report["count"] = man.count;
    report["spec_hash"] = hash_hex(man.spec_hash);
    report["mode"] = mode;
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_train(diffusion::TrainConfig cfg, const std::string& dataset, const std::string& out_raw,
              const std::string& resume) {
    std::string out = resolve_out(out_raw);
    RunLock lock(out);
    auto r = diffusion::train(dataset, cfg, out, resume);
    json report{{"final_checkpoint", r.final_checkpoint},
                {"first_window_loss", r.first_window_loss},
                {"last_window_loss", r.last_window_loss}};
    write_json_file((fs::path(out) / "result.json").string(), report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_sample(const std::string& ckpt, const std::string& prompt, double lon, double lat,
               bool have_tag, int angle_bin, bool uncond, bool text_only,
               sampler::GuidanceConfig gc, uint64_t seed, const std::string& out_raw) {
    std::string out = resolve_out(out_raw);
    LoadedModel m = load_model(ckpt);
    sampler::GuidedNoiseFn guided;
    json cond_desc;
    if (uncond) {
        guided = sampler::uncond_fn(*m.model);
        cond_desc = {{"kind", "uncond"}};
    } else if (text_only) {
        guided = sampler::single_cfg_text_fn(*m.model, prompt_ids(m, prompt), gc);
        cond_desc = {{"kind", "text"}, {"prompt", prompt}};
    } else if (m.cfg.model.cond_mode == diffusion::CondMode::Angle) {
        if (angle_bin < 0 || angle_bin >= geo::kAngleBins)
            throw CliError(kExitConfig, "angle-conditioned model needs --angle-bin in [0,36)");
        guided = sampler::dual_cfg_angle_fn(*m.model, prompt_ids(m, prompt), {angle_bin}, gc);
        cond_desc = {{"kind", "angle"}, {"prompt", prompt}, {"angle_bin", angle_bin}};
    } else {
        if (!have_tag) throw CliError(kExitConfig, "GPS-conditioned model needs --lon and --lat");
        geo::NormalizedGeo n = geo::normalize({lon, lat}, m.cfg.box);
        guided = sampler::dual_cfg_fn(*m.model, prompt_ids(m, prompt), n, gc);
        cond_desc = {{"kind", "gps"}, {"prompt", prompt}, {"lon", lon}, {"lat", lat}};
    }
    Tensor x = sampler::ddim_sample(m.schedule, guided, m.cfg.model.image_size, gc, seed);
    json sidecar{{"checkpoint", ckpt},
                 {"condition", cond_desc},
                 {"seed", seed},
                 {"steps", gc.steps},
                 {"omega_p", gc.omega_p},
                 {"omega_g", gc.omega_g},
                 {"omega", gc.omega}};
    save_sample_png(out, x, sidecar);
    std::cout << json{{"out", out}}.dump(2) << "\n";
    return 0;
}

sampler::RegionSpec parse_region(const std::string& region, const geo::BoundingBox& box) {
    if (region.rfind("grid:", 0) == 0) {
        int nx = 0, ny = 0;
        if (sscanf(region.c_str() + 5, "%dx%d", &nx, &ny) != 2 || nx < 1 || ny < 1)
            throw CliError(kExitConfig, "bad --region, expected grid:NxM");
        return sampler::make_grid_region(box, nx, ny);
    }
    // "lon,lat;lon,lat;..."
    sampler::RegionSpec r;
    std::istringstream ss(region);
    std::string pair;
    while (std::getline(ss, pair, ';')) {
        double lon, lat;
        if (sscanf(pair.c_str(), "%lf,%lf", &lon, &lat) != 2)
            throw CliError(kExitConfig, "bad --region tag list, expected lon,lat;lon,lat");
        r.tags.push_back({lon, lat});
    }
    if (r.tags.empty()) throw CliError(kExitConfig, "empty region");
    return r;
}

int cmd_average(const std::string& ckpt, const std::string& prompt, const std::string& region_str,
                sampler::GuidanceConfig gc, uint64_t seed, const std::string& out_raw) {
    std::string out = resolve_out(out_raw);
    LoadedModel m = load_model(ckpt);
    if (m.cfg.model.cond_mode != diffusion::CondMode::Gps)
        throw CliError(kExitConfig, "average requires a GPS-conditioned checkpoint");
    sampler::RegionSpec region = parse_region(region_str, m.cfg.box);
    auto guided = sampler::averaged_fn(*m.model, prompt_ids(m, prompt), region, m.cfg.box, gc);
    Tensor x = sampler::ddim_sample(m.schedule, guided, m.cfg.model.image_size, gc, seed);
    json sidecar{{"checkpoint", ckpt}, {"prompt", prompt},       {"region", region_str},
                 {"m", region.tags.size()}, {"seed", seed},      {"steps", gc.steps},
                 {"omega_p", gc.omega_p},   {"omega_g", gc.omega_g}};
    save_sample_png(out, x, sidecar);
    std::cout << json{{"out", out}, {"m", region.tags.size()}}.dump(2) << "\n";
    return 0;
}

int cmd_make_prior(const std::string& ckpt, const std::string& dataset, int n,
                   sampler::GuidanceConfig gc, uint64_t seed, const std::string& out_raw) {
    std::string out = resolve_out(out_raw);
    LoadedModel m = load_model(ckpt);
    auto ds = worldgen::Dataset::open(dataset);
    fs::create_directories(out);

    std::ofstream jsonl(fs::path(out) / "samples.jsonl", std::ios::trunc);
    if (!jsonl) throw CliError(kExitData, "cannot write samples.jsonl in " + out);
    json manifest;
    manifest["spec_hash"] = hash_hex(ds.spec.hash());
    manifest["box"] = {{"x_min", ds.spec.box.x_min}, {"x_max", ds.spec.box.x_max},
                       {"y_min", ds.spec.box.y_min}, {"y_max", ds.spec.box.y_max}};
    manifest["count"] = n;
    manifest["vocabulary"] = ds.spec.vocabulary;
    manifest["mode"] = ds.spec.mode == worldgen::Mode::City ? "city" : "landmark";
    manifest["image_size"] = ds.spec.image_size;
    manifest["world_spec"] = ds.spec.to_json();
    std::vector<std::string> files;
    Rng rng(seed);
    char namebuf[32];
    for (int i = 0; i < n; ++i) {
        const auto& meta = ds.metas[static_cast<size_t>(i) % ds.metas.size()];
        auto ids = diffusion::caption_to_ids(meta.caption, ds.spec.vocabulary);
        auto guided = sampler::single_cfg_text_fn(*m.model, ids, gc);
        Tensor x = sampler::ddim_sample(m.schedule, guided, m.cfg.model.image_size, gc, rng.next());
        snprintf(namebuf, sizeof(namebuf), "img_%05d.png", i);
        write_png((fs::path(out) / namebuf).string(), diffusion::tensor_to_image(x));
        files.push_back(namebuf);
        json line{{"file", namebuf}, {"lon", meta.tag.lon}, {"lat", meta.tag.lat},
                  {"caption", meta.caption}};
        jsonl << line.dump() << "\n";
    }
    jsonl.close();
    manifest["files"] = files;
    write_json_file((fs::path(out) / "manifest.json").string(), manifest);
    std::cout << json{{"out", out}, {"count", n}}.dump(2) << "\n";
    return 0;
}

int cmd_distill(sds::SdsConfig cfg, const std::string& ckpt, const std::string& dataset,
                const std::string& out_raw, const std::string& resume) {
    std::string out = resolve_out(out_raw);
    RunLock lock(out);
    auto r = sds::distill(ckpt, dataset, cfg, out, resume);
    json report{{"final_checkpoint", r.final_checkpoint},
                {"occupancy", r.occupancy_path},
                {"final_loss", r.final_loss}};
    write_json_file((fs::path(out) / "result.json").string(), report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_train_clip(geoclip::GpsClipConfig cfg, const std::string& dataset,
                   const std::string& out_raw) {
    std::string out = resolve_out(out_raw);
    RunLock lock(out);
    auto r = geoclip::train_gps_clip(dataset, cfg, out);
    json report{{"final_checkpoint", r.final_checkpoint}, {"final_loss", r.final_loss}};
    write_json_file((fs::path(out) / "result.json").string(), report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_train_classifier(geoclip::AngleClassifierConfig cfg, const std::string& dataset,
                         const std::string& out_raw) {
    std::string out = resolve_out(out_raw);
    RunLock lock(out);
    auto r = geoclip::train_angle_classifier(dataset, cfg, out);
    json report{{"final_checkpoint", r.final_checkpoint},
                {"holdout_accuracy", r.holdout_accuracy},
                {"missing_bins", r.missing_bins}};
    write_json_file((fs::path(out) / "result.json").string(), report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

// Table 1 analogue: GPS-conditioned vs unconditional samples scored by the
// contrastive model and the analytic palette classifier.
int cmd_eval_table1(const std::string& clip_ckpt, const std::string& diff_ckpt,
                    const std::string& dataset, int batches, int per_batch, int steps,
                    uint64_t seed, const std::string& out_raw) {
    std::string out = resolve_out(out_raw);
    LoadedModel m = load_model(diff_ckpt);
    if (m.cfg.model.cond_mode != diffusion::CondMode::Gps)
        throw CliError(kExitConfig, "eval table1 requires a GPS-conditioned checkpoint");
    geoclip::GpsClipModel clip = geoclip::load_gps_clip(clip_ckpt);
    auto ds = worldgen::Dataset::open(dataset);

    sampler::GuidanceConfig gc;
    gc.steps = steps;
    gc.omega = 4.0f;  // single-condition weight for geo-only guidance

    Rng rng(seed ^ 0xe7a1);
    int cond_wins = 0;
    int cond_district_hits = 0, uncond_district_hits = 0, total_imgs = 0;
    for (int b = 0; b < batches; ++b) {
        std::vector<Tensor> cond_imgs, uncond_imgs;
        std::vector<geo::NormalizedGeo> tags;
        for (int i = 0; i < per_batch; ++i) {
            geo::GeoTag tag{rng.uniform(m.cfg.box.x_min, m.cfg.box.x_max),
                            rng.uniform(m.cfg.box.y_min, m.cfg.box.y_max)};
            geo::NormalizedGeo n = geo::normalize(tag, m.cfg.box);
            uint64_t s = rng.next();
            Tensor xc = sampler::ddim_sample(m.schedule, geo_only_fn(*m.model, n, gc),
                                             m.cfg.model.image_size, gc, s);
            Tensor xu = sampler::ddim_sample(m.schedule, sampler::uncond_fn(*m.model),
                                             m.cfg.model.image_size, gc, s);
            int truth = ds.spec.district_of(tag);
            if (worldgen::classify_by_palette(ds.spec, diffusion::tensor_to_image(xc)) == truth)
                ++cond_district_hits;
            if (worldgen::classify_by_palette(ds.spec, diffusion::tensor_to_image(xu)) == truth)
                ++uncond_district_hits;
            ++total_imgs;
            cond_imgs.push_back(std::move(xc));
            uncond_imgs.push_back(std::move(xu));
            tags.push_back(n);
        }
        double gs_cond = geoclip::gps_score(clip, cond_imgs, tags);
        double gs_uncond = geoclip::gps_score(clip, uncond_imgs, tags);
        if (gs_cond > gs_uncond) ++cond_wins;
    }

    int k = static_cast<int>(ds.spec.districts.size());
    json report{{"suite", "table1"},
                {"batches", batches},
                {"per_batch", per_batch},
                {"gps_score_win_fraction", static_cast<double>(cond_wins) / batches},
                {"district_accuracy_conditioned",
                 static_cast<double>(cond_district_hits) / total_imgs},
                {"district_accuracy_unconditional",
                 static_cast<double>(uncond_district_hits) / total_imgs},
                {"district_chance", 1.0 / k}};
    write_json_file(out, report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

// Table 2 analogue: angle accuracy of conditioned / angle-dropped / noise images.
int cmd_eval_table2(const std::string& cls_ckpt, const std::string& diff_ckpt, int reps, int steps,
                    uint64_t seed, const std::string& out_raw) {
    std::string out = resolve_out(out_raw);
    LoadedModel m = load_model(diff_ckpt);
    if (m.cfg.model.cond_mode != diffusion::CondMode::Angle)
        throw CliError(kExitConfig, "eval table2 requires an angle-conditioned checkpoint");
    geoclip::AngleClassifier cls = geoclip::load_angle_classifier(cls_ckpt);
    auto caption = m.cfg.vocabulary.empty()
                       ? std::vector<int>{}
                       : diffusion::caption_to_ids(split_prompt("a photo of"), m.cfg.vocabulary);

    sampler::GuidanceConfig gc;
    gc.steps = steps;

    auto gen_cond = [&](int bin, int rep) {
        auto guided = sampler::dual_cfg_angle_fn(*m.model, caption, {bin}, gc);
        uint64_t s = seed * 1000003ull + static_cast<uint64_t>(bin) * 101 + static_cast<uint64_t>(rep);
        return sampler::ddim_sample(m.schedule, guided, m.cfg.model.image_size, gc, s);
    };
    auto gen_dropped = [&](int bin, int rep) {
        auto guided = sampler::single_cfg_text_fn(*m.model, caption, gc);
        uint64_t s = seed * 1000003ull + static_cast<uint64_t>(bin) * 101 + static_cast<uint64_t>(rep);
        return sampler::ddim_sample(m.schedule, guided, m.cfg.model.image_size, gc, s);
    };
    auto gen_noise = [&](int bin, int rep) {
        Rng r(seed * 7919ull + static_cast<uint64_t>(bin) * 131 + static_cast<uint64_t>(rep));
        Tensor x({m.cfg.model.image_size, m.cfg.model.image_size, 3});
        for (int64_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(r.normal());
        return x;
    };

    json report{{"suite", "table2"},
                {"chance_percent", geoclip::kAngleChancePercent},
                {"reps_per_bin", reps},
                {"accuracy_conditioned_percent", geoclip::angle_accuracy(gen_cond, cls, reps)},
                {"accuracy_dropped_percent", geoclip::angle_accuracy(gen_dropped, cls, reps)},
                {"accuracy_noise_percent", geoclip::angle_accuracy(gen_noise, cls, reps)}};
    write_json_file(out, report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_eval_retrieval(const std::string& clip_ckpt, const std::string& dataset, int n,
                       uint64_t seed, const std::string& out_raw) {
    std::string out = resolve_out(out_raw);
    geoclip::GpsClipModel clip = geoclip::load_gps_clip(clip_ckpt);
    auto ds = worldgen::Dataset::open(dataset);
    auto set = diffusion::TrainSet::load(ds);
    if (static_cast<size_t>(n) > set.images.size())
        throw CliError(kExitConfig, "retrieval n exceeds dataset size");
    std::vector<size_t> order(set.images.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(seed ^ 0x5e7);
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<Tensor> images;
    std::vector<geo::NormalizedGeo> tags;
    for (int i = 0; i < n; ++i) {
        images.push_back(set.images[order[static_cast<size_t>(i)]]);
        tags.push_back(set.ngeo[order[static_cast<size_t>(i)]]);
    }
    double top1 = geoclip::retrieval_top1(clip, images, tags);
    json report{{"suite", "retrieval"},
                {"candidates", n},
                {"top1", top1},
                {"chance", 1.0 / n},
                {"gps_score", geoclip::gps_score(clip, images, tags)}};
    write_json_file(out, report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

// SDS geometry: occupancy and azimuth-0 silhouette IoU against the analytic world.
int cmd_eval_sds(const std::string& run_dir, const std::string& dataset,
                 const std::string& out_raw) {
    std::string out = resolve_out(out_raw);
    auto ds = worldgen::Dataset::open(dataset);
    if (ds.spec.mode != worldgen::Mode::Landmark)
        throw CliError(kExitConfig, "eval sds requires a landmark dataset");

    nerf::OccupancyGrid grid = nerf::load_occupancy((fs::path(run_dir) / "occupancy.bin").string());
    auto truth = worldgen::landmark_occupancy_grid(ds.spec, grid.resolution, grid.bound);
    double occ_iou = nerf::occupancy_iou(grid.voxels, truth);

    std::ifstream cf(fs::path(run_dir) / "config.json");
    if (!cf) throw CliError(kExitData, "no config.json in " + run_dir);
    sds::SdsConfig cfg = sds::SdsConfig::from_json(json::parse(cf));
    nerf::RadianceField field(cfg.field, cfg.seed);
    load_checkpoint((fs::path(run_dir) / "final.ckpt").string(), field.params());

    nerf::CameraPose pose;
    pose.azimuth_deg = 0.0;
    pose.elevation_deg = -15.0;
    pose.radius = cfg.camera_radius;
    pose.fov_deg = cfg.fov_deg;
    pose.resolution = cfg.render_size;
    ag::NoGradGuard ng;
    nerf::RenderOutput ro = nerf::render(field, pose, cfg.samples_per_ray);
    std::vector<uint8_t> pred_sil(static_cast<size_t>(pose.resolution) * pose.resolution);
    for (size_t i = 0; i < pred_sil.size(); ++i)
        pred_sil[i] = ro.opacity->value[static_cast<int64_t>(i)] > 0.5f ? 1 : 0;
    worldgen::WorldSpec spec_hi = ds.spec;
    spec_hi.image_size = pose.resolution;
    auto true_sil = worldgen::landmark_silhouette(spec_hi, 0.0, -15.0);
    double sil_iou = nerf::occupancy_iou(pred_sil, true_sil);

    json report{{"suite", "sds"},
                {"occupancy_iou", occ_iou},
                {"occupancy_resolution", grid.resolution},
                {"silhouette_iou_azimuth0", sil_iou}};
    write_json_file(out, report);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int classify_exception(const std::exception& e) {
    std::string msg = e.what();
    if (msg.find("non-finite") != std::string::npos) return kExitNumeric;
    if (dynamic_cast<const std::invalid_argument*>(&e) ||
        dynamic_cast<const std::logic_error*>(&e) ||
        dynamic_cast<const worldgen::VocabularyError*>(&e) ||
        dynamic_cast<const geo::OutOfBoxError*>(&e))
        return kExitConfig;
    return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GPS-conditioned synthetic-world diffusion pipeline"};
    app.require_subcommand(1);

    // gen-data
    std::string gd_mode = "city", gd_out;
    int gd_n = 1000, gd_size = 32, gd_grid = 3;
    uint64_t gd_seed = 0, gd_world_seed = 0;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen->add_option("--mode", gd_mode)->check(CLI::IsMember({"city", "landmark"}));
    gen->add_option("--n", gd_n, "sample count");
    gen->add_option("--seed", gd_seed);
    auto* gd_ws = gen->add_option("--world-seed", gd_world_seed,
                                  "world-spec seed (default: --seed); lets a held-out "
                                  "set share the world of a training set");
    gen->add_option("--image-size", gd_size);
    gen->add_option("--grid", gd_grid, "city district grid side");
    gen->add_option("--out", gd_out)->required();

    // train
    diffusion::TrainConfig tc;
    std::string tr_dataset, tr_out, tr_resume;
    auto* tr = app.add_subcommand("train", "Train the conditional denoiser");
    tr->add_option("--dataset", tr_dataset)->required();
    tr->add_option("--mode", tc.mode)->check(CLI::IsMember({"city", "angle"}));
    tr->add_option("--steps", tc.steps);
    tr->add_option("--batch-size", tc.batch_size);
    tr->add_option("--lr", tc.lr);
    tr->add_option("--weight-decay", tc.weight_decay);
    tr->add_option("--seed", tc.seed);
    tr->add_option("--T", tc.T, "diffusion steps (default 1000)");
    tr->add_option("--schedule", tc.schedule)->check(CLI::IsMember({"linear", "cosine"}));
    tr->add_option("--t-high-bias", tc.t_high_bias,
                   "probability of drawing t from the top noise quarter (default 0: uniform)")
        ->check(CLI::Range(0.0f, 1.0f));
    tr->add_option("--lambda-preservation", tc.lambda_preservation, "preservation weight (default 1)");
    tr->add_option("--preservation-dir", tc.preservation_dir);
    tr->add_option("--checkpoint-every", tc.checkpoint_every);
    tr->add_option("--base-channels", tc.model.base_channels);
    tr->add_option("--token-width", tc.model.token_width, "conditioning token width D (default 64)");
    tr->add_option("--resume", tr_resume);
    tr->add_option("--out", tr_out)->required();

    // sample
    std::string sm_ckpt, sm_prompt, sm_out;
    double sm_lon = 0, sm_lat = 0;
    int sm_bin = -1;
    bool sm_uncond = false, sm_text_only = false;
    sampler::GuidanceConfig sm_gc;
    uint64_t sm_seed = 0;
    auto* sm = app.add_subcommand("sample", "Sample one image with guidance");
    sm->add_option("--checkpoint", sm_ckpt)->required();
    sm->add_option("--prompt", sm_prompt);
    auto* lon_opt = sm->add_option("--lon", sm_lon);
    sm->add_option("--lat", sm_lat);
    sm->add_option("--angle-bin", sm_bin);
    sm->add_flag("--uncond", sm_uncond);
    sm->add_flag("--text-only", sm_text_only);
    sm->add_option("--steps", sm_gc.steps, "DDIM steps (default 50)");
    sm->add_option("--eta", sm_gc.eta);
    sm->add_option("--omega-p", sm_gc.omega_p, "text weight (default 3.5)");
    sm->add_option("--omega-g", sm_gc.omega_g, "GPS/angle weight (default 7.5)");
    sm->add_option("--omega", sm_gc.omega, "single-condition weight (default 7.5)");
    sm->add_option("--seed", sm_seed);
    sm->add_option("--out", sm_out)->required();

    // average
    std::string av_ckpt, av_prompt, av_region = "grid:4x4", av_out;
    sampler::GuidanceConfig av_gc;
    uint64_t av_seed = 0;
    auto* av = app.add_subcommand("average", "Regional averaged-noise sample");
    av->add_option("--checkpoint", av_ckpt)->required();
    av->add_option("--prompt", av_prompt)->required();
    av->add_option("--region", av_region, "grid:NxM or lon,lat;lon,lat list");
    av->add_option("--steps", av_gc.steps);
    av->add_option("--omega-p", av_gc.omega_p);
    av->add_option("--omega-g", av_gc.omega_g);
    av->add_option("--seed", av_seed);
    av->add_option("--out", av_out)->required();

    // make-prior
    std::string mp_ckpt, mp_dataset, mp_out;
    int mp_n = 64;
    sampler::GuidanceConfig mp_gc;
    uint64_t mp_seed = 0;
    auto* mp = app.add_subcommand("make-prior", "Sample a preservation set from a checkpoint");
    mp->add_option("--checkpoint", mp_ckpt)->required();
    mp->add_option("--dataset", mp_dataset, "source dataset (spec + captions)")->required();
    mp->add_option("--n", mp_n);
    mp->add_option("--steps", mp_gc.steps);
    mp->add_option("--omega", mp_gc.omega);
    mp->add_option("--seed", mp_seed);
    mp->add_option("--out", mp_out)->required();

    // distill
    sds::SdsConfig sc;
    std::string ds_ckpt, ds_dataset, ds_out, ds_resume;
    bool ds_no_angle = false;
    auto* dst = app.add_subcommand("distill", "Score-distill a radiance field");
    dst->add_option("--checkpoint", ds_ckpt)->required();
    dst->add_option("--dataset", ds_dataset)->required();
    dst->add_option("--steps", sc.steps);
    dst->add_option("--omega", sc.omega, "3D CFG weight (default 30)");
    dst->add_option("--lr", sc.lr, "field learning rate (default 0.01)");
    dst->add_option("--render-size", sc.render_size);
    dst->add_option("--samples-per-ray", sc.samples_per_ray);
    dst->add_option("--orient-stride", sc.orient_stride);
    dst->add_option("--lambda-orient", sc.lambda_orient);
    dst->add_option("--lambda-opacity", sc.lambda_opacity);
    dst->add_option("--snapshot-every", sc.snapshot_every);
    dst->add_option("--seed", sc.seed);
    dst->add_flag("--no-angle", ds_no_angle, "ablation: null the angle condition");
    dst->add_option("--resume", ds_resume);
    dst->add_option("--out", ds_out)->required();

    // train-clip
    geoclip::GpsClipConfig cc;
    std::string tc_dataset, tc_out;
    auto* tcl = app.add_subcommand("train-clip", "Train the contrastive GPS-image model");
    tcl->add_option("--dataset", tc_dataset)->required();
    tcl->add_option("--steps", cc.steps);
    tcl->add_option("--batch-size", cc.batch_size);
    tcl->add_option("--lr", cc.lr);
    tcl->add_option("--tau", cc.tau, "temperature (default 0.07)");
    tcl->add_option("--embed-dim", cc.embed_dim);
    tcl->add_option("--seed", cc.seed);
    tcl->add_option("--out", tc_out)->required();

    // train-classifier
    geoclip::AngleClassifierConfig ac;
    std::string ac_dataset, ac_out;
    auto* tcf = app.add_subcommand("train-classifier", "Train the angle-bin classifier");
    tcf->add_option("--dataset", ac_dataset)->required();
    tcf->add_option("--steps", ac.steps);
    tcf->add_option("--batch-size", ac.batch_size);
    tcf->add_option("--lr", ac.lr);
    tcf->add_option("--holdout", ac.holdout_fraction);
    tcf->add_option("--seed", ac.seed);
    tcf->add_option("--out", ac_out)->required();

    // eval
    std::string ev_suite, ev_clip, ev_ckpt, ev_classifier, ev_dataset, ev_run, ev_out;
    int ev_batches = 20, ev_per_batch = 8, ev_reps = 10, ev_steps = 50, ev_n = 256;
    uint64_t ev_seed = 0;
    auto* ev = app.add_subcommand("eval", "Evaluation suites with JSON reports");
    ev->add_option("--suite", ev_suite)->required()->check(
        CLI::IsMember({"table1", "table2", "retrieval", "sds"}));
    ev->add_option("--clip", ev_clip, "GPS-CLIP checkpoint");
    ev->add_option("--checkpoint", ev_ckpt, "diffusion checkpoint");
    ev->add_option("--classifier", ev_classifier, "angle classifier checkpoint");
    ev->add_option("--dataset", ev_dataset);
    ev->add_option("--run", ev_run, "distill run directory");
    ev->add_option("--batches", ev_batches);
    ev->add_option("--per-batch", ev_per_batch);
    ev->add_option("--reps", ev_reps, "images per bin (default 10)");
    ev->add_option("--steps", ev_steps);
    ev->add_option("--n", ev_n, "retrieval candidates");
    ev->add_option("--seed", ev_seed);
    ev->add_option("--out", ev_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(gd_mode, gd_n, gd_seed, gd_ws->count() ? gd_world_seed : gd_seed,
                                gd_size, gd_grid, gd_out);
        if (tr->parsed()) return cmd_train(tc, tr_dataset, tr_out, tr_resume);
        if (sm->parsed())
            return cmd_sample(sm_ckpt, sm_prompt, sm_lon, sm_lat, lon_opt->count() > 0, sm_bin,
                              sm_uncond, sm_text_only, sm_gc, sm_seed, sm_out);
        if (av->parsed()) return cmd_average(av_ckpt, av_prompt, av_region, av_gc, av_seed, av_out);
        if (mp->parsed()) return cmd_make_prior(mp_ckpt, mp_dataset, mp_n, mp_gc, mp_seed, mp_out);
        if (dst->parsed()) {
            sc.use_angle_condition = !ds_no_angle;
            return cmd_distill(sc, ds_ckpt, ds_dataset, ds_out, ds_resume);
        }
        if (tcl->parsed()) return cmd_train_clip(cc, tc_dataset, tc_out);
        if (tcf->parsed()) return cmd_train_classifier(ac, ac_dataset, ac_out);
        if (ev->parsed()) {
            if (ev_suite == "table1")
                return cmd_eval_table1(ev_clip, ev_ckpt, ev_dataset, ev_batches, ev_per_batch,
                                       ev_steps, ev_seed, ev_out);
            if (ev_suite == "table2")
                return cmd_eval_table2(ev_classifier, ev_ckpt, ev_reps, ev_steps, ev_seed, ev_out);
            if (ev_suite == "retrieval")
                return cmd_eval_retrieval(ev_clip, ev_dataset, ev_n, ev_seed, ev_out);
            return cmd_eval_sds(ev_run, ev_dataset, ev_out);
        }
    } catch (const CliError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return classify_exception(e);
    }
    return 0;
}

#include "gpsgen/train.hpp"

#include <filesystem>
#include <fstream>

#include "gpsgen/checkpoint.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace gpsgen::diffusion {

json TrainConfig::to_json() const {
    json j;
    j["mode"] = mode;
    j["steps"] = steps;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["seed"] = seed;
    j["T"] = T;
    j["schedule"] = schedule;
    j["dropout"] = {{"p_text_only", dropout.p_text_only},
                    {"p_gps_only", dropout.p_gps_only},
                    {"p_uncond", dropout.p_uncond}};
    j["t_high_bias"] = t_high_bias;
    j["lambda_preservation"] = lambda_preservation;
    j["preservation_dir"] = preservation_dir;
    j["checkpoint_every"] = checkpoint_every;
    j["model"] = model.to_json();
    j["vocabulary"] = vocabulary;
    j["box"] = {{"x_min", box.x_min}, {"x_max", box.x_max}, {"y_min", box.y_min}, {"y_max", box.y_max}};
    return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.mode = j.at("mode");
    c.steps = j.at("steps");
    c.batch_size = j.at("batch_size");
    c.lr = j.at("lr");
    c.weight_decay = j.at("weight_decay");
    c.seed = j.at("seed");
    c.T = j.at("T");
    c.schedule = j.at("schedule");
    c.dropout.p_text_only = j.at("dropout").at("p_text_only");
    c.dropout.p_gps_only = j.at("dropout").at("p_gps_only");
    c.dropout.p_uncond = j.at("dropout").at("p_uncond");
    c.t_high_bias = j.value("t_high_bias", 0.0f);
    c.lambda_preservation = j.at("lambda_preservation");
    c.preservation_dir = j.at("preservation_dir");
    c.checkpoint_every = j.at("checkpoint_every");
    c.model = DenoiserConfig::from_json(j.at("model"));
    c.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    c.box.x_min = j.at("box").at("x_min");
    c.box.x_max = j.at("box").at("x_max");
    c.box.y_min = j.at("box").at("y_min");
    c.box.y_max = j.at("box").at("y_max");
    return c;
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({img.height, img.width, 3});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = 2.0f * img.pixels[static_cast<size_t>(i)] - 1.0f;
    return t;
}

Image tensor_to_image(const Tensor& t) {
    if (t.rank() != 3 || t.dim(2) != 3)
        throw std::invalid_argument("tensor_to_image: expected [H,W,3]");
    Image img(t.dim(0), t.dim(1));
    for (int64_t i = 0; i < t.size(); ++i) {
        float v = 0.5f * (t[i] + 1.0f);
        img.pixels[static_cast<size_t>(i)] = std::min(1.0f, std::max(0.0f, v));
    }
    return img;
}

std::vector<int> caption_to_ids(const std::vector<std::string>& caption,
                                const std::vector<std::string>& vocabulary) {
    std::vector<int> ids;
    ids.reserve(caption.size());
    for (const auto& tok : caption) {
        auto it = std::find(vocabulary.begin(), vocabulary.end(), tok);
        if (it == vocabulary.end())
            throw worldgen::VocabularyError("caption_to_ids: unknown token '" + tok + "'");
        ids.push_back(static_cast<int>(it - vocabulary.begin()));
    }
    return ids;
}

TrainSet TrainSet::load(const worldgen::Dataset& ds) {
    TrainSet s;
    s.spec = ds.spec;
    s.images.reserve(ds.size());
    for (size_t i = 0; i < ds.size(); ++i) {
        s.images.push_back(image_to_tensor(ds.load_image(i)));
        const auto& m = ds.metas[i];
        s.caption_ids.push_back(caption_to_ids(m.caption, ds.spec.vocabulary));
        s.ngeo.push_back(geo::normalize(m.tag, ds.spec.box));
        s.angle_bin.push_back(m.azimuth_bin);
    }
    return s;
}

namespace {

/// z_t built per sample (timesteps differ across the batch).
Tensor batch_forward_diffuse(const TrainBatch& batch, const NoiseSchedule& s) {
    Tensor z(batch.x0.shape);
    int n = batch.x0.dim(0);
    int64_t per = batch.x0.size() / n;
    for (int i = 0; i < n; ++i) {
        float a = static_cast<float>(std::sqrt(s.abar[static_cast<size_t>(batch.t[static_cast<size_t>(i)])]));
        float b = static_cast<float>(s.sigma[static_cast<size_t>(batch.t[static_cast<size_t>(i)])]);
        for (int64_t j = 0; j < per; ++j)
            z[i * per + j] = a * batch.x0[i * per + j] + b * batch.eps[i * per + j];
    }
    return z;
}

ag::Var mse_loss(const TrainBatch& batch, const Denoiser& model, const NoiseSchedule& schedule) {
    Tensor z = batch_forward_diffuse(batch, schedule);
    ag::Var pred = model.forward(ag::constant(std::move(z)), batch.tokens, batch.t);
    return ag::mse(ag::constant(batch.eps), pred);
}

}  // namespace

ag::Var recon_loss(const TrainBatch& batch, const Denoiser& model, const NoiseSchedule& schedule) {
    return mse_loss(batch, model, schedule);
}

ag::Var preservation_loss(const TrainBatch& prior_batch, const Denoiser& model,
                          const NoiseSchedule& schedule) {
    return mse_loss(prior_batch, model, schedule);
}

namespace {

TrainBatch draw_batch(const TrainSet& set, const Denoiser& model, const TrainConfig& cfg,
                      const NoiseSchedule& schedule, Rng& rng, bool preservation) {
    const int n = cfg.batch_size;
    const int h = set.images[0].dim(0), w = set.images[0].dim(1);
    TrainBatch b;
    b.x0 = Tensor({n, h, w, 3});
    b.eps = Tensor({n, h, w, 3});
    int64_t per = static_cast<int64_t>(h) * w * 3;
    for (int i = 0; i < n; ++i) {
        size_t idx = rng.below(set.images.size());
        std::copy(set.images[idx].data.begin(), set.images[idx].data.end(),
                  b.x0.data.begin() + i * per);
        if (cfg.t_high_bias > 0.0f && rng.uniform() < cfg.t_high_bias) {
            int lo = 3 * schedule.T / 4;
            b.t.push_back(lo + static_cast<int>(rng.below(static_cast<uint64_t>(schedule.T - lo))));
        } else {
            b.t.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(schedule.T))));
        }
        for (int64_t j = 0; j < per; ++j)
            b.eps[i * per + j] = static_cast<float>(rng.normal());
        if (preservation) {
            b.tokens.push_back(model.tokens_text_nulled(set.caption_ids[idx]));
        } else {
            CondKind kind = apply_dropout(cfg.dropout, rng);
            geo::AngleBin bin{std::max(0, set.angle_bin[idx])};
            b.tokens.push_back(model.build_tokens(kind, set.caption_ids[idx], set.ngeo[idx], bin));
        }
    }
    return b;
}

}  // namespace

TrainResult train(const std::string& dataset_dir, const TrainConfig& cfg,
                  const std::string& run_dir, const std::string& resume_from) {
    auto ds = worldgen::Dataset::open(dataset_dir);
    if (cfg.mode == "angle" && ds.spec.mode != worldgen::Mode::Landmark)
        throw std::invalid_argument("train: angle mode requires a landmark dataset");
    if (cfg.mode == "city" && ds.spec.mode != worldgen::Mode::City)
        throw std::invalid_argument("train: city mode requires a city dataset");

    TrainSet set = TrainSet::load(ds);
    std::optional<TrainSet> prior_set;
    if (cfg.mode == "angle" && !cfg.preservation_dir.empty())
        prior_set = TrainSet::load(worldgen::Dataset::open(cfg.preservation_dir));

    DenoiserConfig mc = cfg.model;
    mc.vocab_size = static_cast<int>(ds.spec.vocabulary.size());
    mc.image_size = ds.spec.image_size;
    mc.cond_mode = cfg.mode == "angle" ? CondMode::Angle : CondMode::Gps;
    Denoiser model(mc, cfg.seed);

    NoiseSchedule schedule = build_schedule(cfg.T, schedule_kind_from_name(cfg.schedule));
    nn::AdamW opt(model.params().vars(), cfg.lr, 0.9f, 0.999f, 1e-8f, cfg.weight_decay);

    fs::create_directories(run_dir);
    TrainConfig full_cfg = cfg;
    full_cfg.model = mc;
    full_cfg.vocabulary = ds.spec.vocabulary;
    full_cfg.box = ds.spec.box;
    json cfg_json = full_cfg.to_json();
    {
        std::ofstream f(fs::path(run_dir) / "config.json", std::ios::trunc);
        f << cfg_json.dump(2) << "\n";
    }

    int64_t start_step = 0;
    if (!resume_from.empty()) {
        CheckpointMeta meta = load_checkpoint(resume_from, model.params(), &opt);
        // extending a run is legitimate, so the step budget is excluded from
        // the compatibility check; everything else must match exactly
        json was = meta.config, now = cfg_json;
        was.erase("steps");
        now.erase("steps");
        if (was != now)
            throw CheckpointError("train: resume config does not match checkpoint config");
        start_step = meta.step;
    }

    CheckpointMeta meta;
    meta.config = cfg_json;
    meta.schedule = {{"kind", cfg.schedule}, {"T", cfg.T}};

    std::ofstream loss_log(fs::path(run_dir) / "loss.csv",
                           start_step > 0 ? std::ios::app : std::ios::trunc);
    if (start_step == 0) loss_log << "step,loss\n";

    // the RNG stream is replayed up to the resume point so a resumed run
    // continues the exact same sample/noise sequence
    Rng rng(cfg.seed ^ 0x7ea7c0de);
    double first_sum = 0.0, last_sum = 0.0;
    int first_n = 0, last_n = 0;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        TrainBatch batch = draw_batch(set, model, cfg, schedule, rng, false);
        std::optional<TrainBatch> prior;
        if (prior_set && cfg.lambda_preservation > 0.0f)
            prior = draw_batch(*prior_set, model, cfg, schedule, rng, true);
        if (step < start_step) continue;  // replay for determinism

        ag::Var loss = recon_loss(batch, model, schedule);
        if (prior)
            loss = ag::add(loss,
                           ag::scale(preservation_loss(*prior, model, schedule),
                                     cfg.lambda_preservation));
        opt.zero_grad();
        ag::backward(loss);
        float lval = loss->value[0];
        if (!std::isfinite(lval)) throw std::runtime_error("train: non-finite loss");
        opt.step();

        loss_log << step + 1 << "," << lval << "\n";
        if (step < 100) {
            first_sum += lval;
            ++first_n;
        }
        if (step >= cfg.steps - 100) {
            last_sum += lval;
            ++last_n;
        }
        meta.step = step + 1;
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.steps) {
            save_checkpoint((fs::path(run_dir) / ("ckpt_" + std::to_string(step + 1) + ".ckpt")).string(),
                            meta, model.params(), &opt);
        }
    }
    meta.step = cfg.steps;
    std::string final_path = (fs::path(run_dir) / "final.ckpt").string();
    save_checkpoint(final_path, meta, model.params(), &opt);

    TrainResult r;
    r.final_checkpoint = final_path;
    r.first_window_loss = first_n ? static_cast<float>(first_sum / first_n) : 0.0f;
    r.last_window_loss = last_n ? static_cast<float>(last_sum / last_n) : 0.0f;
    return r;
}

}  // namespace gpsgen::diffusion

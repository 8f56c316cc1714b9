#include "gpsgen/sampler.hpp"

#include <cmath>

namespace gpsgen::sampler {

using ag::Var;

RegionSpec make_grid_region(const geo::BoundingBox& box, int nx, int ny) {
    if (nx < 1 || ny < 1) throw std::invalid_argument("make_grid_region: grid must be >= 1x1");
    RegionSpec r;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            r.tags.push_back({box.x_min + (box.x_max - box.x_min) * (i + 0.5) / nx,
                              box.y_min + (box.y_max - box.y_min) * (j + 0.5) / ny});
    return r;
}

Tensor cfg_single(const Tensor& eps_cond, const Tensor& eps_uncond, float omega) {
    if (!eps_cond.same_shape(eps_uncond))
        throw std::invalid_argument("cfg_single: shape mismatch");
    Tensor out(eps_cond.shape);
    for (int64_t i = 0; i < out.size(); ++i)
        out[i] = (1.0f + omega) * eps_cond[i] - omega * eps_uncond[i];
    return out;
}

Tensor cfg_dual(const Tensor& eps_nn, const Tensor& eps_pn, const Tensor& eps_pg, float omega_p,
                float omega_g) {
    if (!eps_nn.same_shape(eps_pn) || !eps_nn.same_shape(eps_pg))
        throw std::invalid_argument("cfg_dual: shape mismatch");
    Tensor out(eps_nn.shape);
    for (int64_t i = 0; i < out.size(); ++i)
        out[i] = eps_nn[i] + omega_p * (eps_pn[i] - eps_nn[i]) + omega_g * (eps_pg[i] - eps_pn[i]);
    return out;
}

namespace {

/// Evaluate the model on one image under k different token sequences.
std::vector<Tensor> predict_many(const Denoiser& model, const Tensor& z,
                                 const std::vector<Var>& tokens, int t) {
    if (z.shape.size() != 3 || z.dim(2) != 3)
        throw std::invalid_argument("guided sampling expects a single [H,W,3] image");
    int k = static_cast<int>(tokens.size());
    int h = z.dim(0), w = z.dim(1);
    Tensor tiled({k, h, w, 3});
    for (int i = 0; i < k; ++i)
        std::copy(z.data.begin(), z.data.end(), tiled.data.begin() + static_cast<int64_t>(i) * z.size());
    std::vector<int> ts(static_cast<size_t>(k), t);
    Tensor out = model.predict(tiled, tokens, ts);
    std::vector<Tensor> parts;
    parts.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
        Tensor p({h, w, 3});
        std::copy(out.data.begin() + static_cast<int64_t>(i) * p.size(),
                  out.data.begin() + static_cast<int64_t>(i + 1) * p.size(), p.data.begin());
        parts.push_back(std::move(p));
    }
    return parts;
}

}  // namespace

Tensor averaged_noise(const Denoiser& model, const Tensor& z_t, const std::vector<int>& caption_ids,
                      const RegionSpec& region, const geo::BoundingBox& box,
                      const GuidanceConfig& cfg, int t) {
    if (region.tags.empty()) throw std::invalid_argument("averaged_noise: empty region");
    ag::NoGradGuard ng;
    std::vector<Var> tokens;
    tokens.push_back(model.tokens_null());
    tokens.push_back(model.tokens_text(caption_ids));
    Var text = model.tokens_text(caption_ids);
    for (const auto& tag : region.tags) {
        geo::NormalizedGeo n = geo::normalize(tag, box);
        tokens.push_back(ag::concat_rows({text, model.tokens_geo(n)}));
    }
    auto parts = predict_many(model, z_t, tokens, t);
    Tensor mean(parts[2].shape);
    for (size_t i = 2; i < parts.size(); ++i)
        for (int64_t j = 0; j < mean.size(); ++j) mean[j] += parts[i][j];
    float inv_m = 1.0f / static_cast<float>(region.tags.size());
    for (int64_t j = 0; j < mean.size(); ++j) mean[j] *= inv_m;
    return cfg_dual(parts[0], parts[1], mean, cfg.omega_p, cfg.omega_g);
}

Tensor ddim_sample(const NoiseSchedule& schedule, const GuidedNoiseFn& guided, int image_size,
                   const GuidanceConfig& cfg, uint64_t seed) {
    if (cfg.steps < 1 || cfg.steps > schedule.T)
        throw std::invalid_argument("ddim_sample: steps must be in [1, T]");
    const int s = cfg.steps, t_last = schedule.T - 1;
    std::vector<int> ts(static_cast<size_t>(s));
    for (int i = 0; i < s; ++i)
        ts[static_cast<size_t>(i)] =
            s == 1 ? t_last
                   : static_cast<int>(std::llround(static_cast<double>(t_last) * (s - 1 - i) /
                                                   (s - 1)));

    Rng rng(seed);
    Tensor z({image_size, image_size, 3});
    for (int64_t i = 0; i < z.size(); ++i) z[i] = static_cast<float>(rng.normal());

    for (int i = 0; i < s; ++i) {
        int t = ts[static_cast<size_t>(i)];
        float at = static_cast<float>(schedule.abar[static_cast<size_t>(t)]);
        float ap = i + 1 < s ? static_cast<float>(schedule.abar[static_cast<size_t>(ts[static_cast<size_t>(i + 1)])])
                             : 1.0f;
        Tensor eps_hat = guided(z, t);
        float sq_at = std::sqrt(at), sig_t = std::sqrt(1.0f - at);
        float sig_ddim = 0.0f;
        if (cfg.eta > 0.0f && ap < 1.0f)
            sig_ddim = cfg.eta * std::sqrt((1.0f - ap) / (1.0f - at)) *
                       std::sqrt(std::max(0.0f, 1.0f - at / ap));
        float dir = std::sqrt(std::max(0.0f, 1.0f - ap - sig_ddim * sig_ddim));
        float sq_ap = std::sqrt(ap);
        for (int64_t j = 0; j < z.size(); ++j) {
            float x0 = (z[j] - sig_t * eps_hat[j]) / sq_at;
            x0 = std::min(1.0f, std::max(-1.0f, x0));
            float noise = sig_ddim > 0.0f ? static_cast<float>(rng.normal()) : 0.0f;
            z[j] = sq_ap * x0 + dir * eps_hat[j] + sig_ddim * noise;
        }
    }
    return z;
}

GuidedNoiseFn dual_cfg_fn(const Denoiser& model, const std::vector<int>& caption_ids,
                          const geo::NormalizedGeo& n, const GuidanceConfig& cfg) {
    return [&model, caption_ids, n, cfg](const Tensor& z, int t) {
        ag::NoGradGuard ng;
        std::vector<Var> tokens{model.tokens_null(), model.tokens_text(caption_ids),
                                ag::concat_rows({model.tokens_text(caption_ids), model.tokens_geo(n)})};
        auto parts = predict_many(model, z, tokens, t);
        return cfg_dual(parts[0], parts[1], parts[2], cfg.omega_p, cfg.omega_g);
    };
}

GuidedNoiseFn dual_cfg_angle_fn(const Denoiser& model, const std::vector<int>& caption_ids,
                                const geo::AngleBin& bin, const GuidanceConfig& cfg) {
    return [&model, caption_ids, bin, cfg](const Tensor& z, int t) {
        ag::NoGradGuard ng;
        std::vector<Var> tokens{model.tokens_null(), model.tokens_text(caption_ids),
                                ag::concat_rows({model.tokens_text(caption_ids), model.tokens_angle(bin)})};
        auto parts = predict_many(model, z, tokens, t);
        return cfg_dual(parts[0], parts[1], parts[2], cfg.omega_p, cfg.omega_g);
    };
}

GuidedNoiseFn single_cfg_text_fn(const Denoiser& model, const std::vector<int>& caption_ids,
                                 const GuidanceConfig& cfg) {
    return [&model, caption_ids, cfg](const Tensor& z, int t) {
        ag::NoGradGuard ng;
        std::vector<Var> tokens{model.tokens_text(caption_ids), model.tokens_null()};
        auto parts = predict_many(model, z, tokens, t);
        return cfg_single(parts[0], parts[1], cfg.omega);
    };
}

GuidedNoiseFn averaged_fn(const Denoiser& model, const std::vector<int>& caption_ids,
                          const RegionSpec& region, const geo::BoundingBox& box,
                          const GuidanceConfig& cfg) {
    return [&model, caption_ids, region, box, cfg](const Tensor& z, int t) {
        return averaged_noise(model, z, caption_ids, region, box, cfg, t);
    };
}

GuidedNoiseFn uncond_fn(const Denoiser& model) {
    return [&model](const Tensor& z, int t) {
        ag::NoGradGuard ng;
        std::vector<Var> tokens{model.tokens_null()};
        return predict_many(model, z, tokens, t)[0];
    };
}

}  // namespace gpsgen::sampler

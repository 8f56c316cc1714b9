#pragma once

#include <functional>

#include "gpsgen/denoiser.hpp"
#include "gpsgen/train.hpp"

namespace gpsgen::sampler {

using diffusion::Denoiser;
using diffusion::NoiseSchedule;

struct GuidanceConfig {
    float omega_p = 3.5f;  // text guidance weight
    float omega_g = 7.5f;  // GPS guidance weight
    float omega = 7.5f;    // single-condition weight
    int steps = 50;
    float eta = 0.0f;      // 0 = deterministic DDIM
};

struct RegionSpec {
    std::vector<geo::GeoTag> tags;  // M >= 1 sampled locations
};

/// Uniform nx x ny grid of cell centers over the box (default region pattern).
RegionSpec make_grid_region(const geo::BoundingBox& box, int nx, int ny);

/// (1 + omega) * eps_cond - omega * eps_uncond
Tensor cfg_single(const Tensor& eps_cond, const Tensor& eps_uncond, float omega);

/// eps_nn + omega_p * (eps_pn - eps_nn) + omega_g * (eps_pg - eps_pn)
Tensor cfg_dual(const Tensor& eps_nn, const Tensor& eps_pn, const Tensor& eps_pg, float omega_p,
                float omega_g);

/// Dual guidance with the fully-conditional term replaced by the mean over
/// the region's per-location conditional predictions.
Tensor averaged_noise(const Denoiser& model, const Tensor& z_t, const std::vector<int>& caption_ids,
                      const RegionSpec& region, const geo::BoundingBox& box,
                      const GuidanceConfig& cfg, int t);

/// Guided noise estimate at (z, t); the sampler is generic over guidance.
using GuidedNoiseFn = std::function<Tensor(const Tensor& z_t, int t)>;

/// Deterministic-by-default DDIM over an evenly spaced timestep subset.
/// Initial noise derives from `seed` alone so regional comparisons can share it.
Tensor ddim_sample(const NoiseSchedule& schedule, const GuidedNoiseFn& guided, int image_size,
                   const GuidanceConfig& cfg, uint64_t seed);

/// Ready-made guidance closures (each batches its conditional evaluations).
GuidedNoiseFn dual_cfg_fn(const Denoiser& model, const std::vector<int>& caption_ids,
                          const geo::NormalizedGeo& n, const GuidanceConfig& cfg);
GuidedNoiseFn dual_cfg_angle_fn(const Denoiser& model, const std::vector<int>& caption_ids,
                                const geo::AngleBin& bin, const GuidanceConfig& cfg);
GuidedNoiseFn single_cfg_text_fn(const Denoiser& model, const std::vector<int>& caption_ids,
                                 const GuidanceConfig& cfg);
GuidedNoiseFn averaged_fn(const Denoiser& model, const std::vector<int>& caption_ids,
                          const RegionSpec& region, const geo::BoundingBox& box,
                          const GuidanceConfig& cfg);
GuidedNoiseFn uncond_fn(const Denoiser& model);

}  // namespace gpsgen::sampler

#pragma once

#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "gpsgen/denoiser.hpp"
#include "gpsgen/nerf.hpp"
#include "gpsgen/schedule.hpp"
#include "gpsgen/worldgen.hpp"

namespace gpsgen::sds {

using diffusion::Denoiser;
using diffusion::NoiseSchedule;

struct SdsConfig {
    float omega = 30.0f;  // 3D CFG weight (per-landmark knob)
    int steps = 2000;
    float lr = 0.01f;
    // timestep interval fractions, annealed linearly per endpoint
    float t_start_min = 0.98f, t_start_max = 0.98f;
    float t_end_min = 0.02f, t_end_max = 0.50f;
    double elev_min_deg = -30.0, elev_max_deg = 0.0;
    double camera_radius = 3.0;
    double fov_deg = 45.0;
    int render_size = 64;      // power-of-two multiple of the denoiser size
    int samples_per_ray = 24;
    float lambda_orient = 0.01f;
    float lambda_opacity = 0.001f;
    int orient_stride = 8;     // ray subsampling inside orientation_reg
    uint64_t seed = 0;
    int snapshot_every = 500;
    bool use_angle_condition = true;  // false = ablation (angle token nulled)
    nerf::NerfConfig field;

    nlohmann::json to_json() const;
    static SdsConfig from_json(const nlohmann::json& j);
};

/// Linear interpolation of the (min, max) timestep-fraction interval.
std::pair<float, float> anneal_interval(int64_t step, int64_t total,
                                        std::pair<float, float> start = {0.98f, 0.98f},
                                        std::pair<float, float> end = {0.02f, 0.50f});

/// Azimuth uniform over (-180, 180], elevation uniform over the configured
/// sub-horizon range, fixed radius/fov.
nerf::CameraPose sample_camera(Rng& rng, const SdsConfig& cfg);

/// (1 + omega) * eps_cond - omega * eps_uncond (both conditions zeroed in eps_uncond).
Tensor cfg_3d(const Tensor& eps_cond, const Tensor& eps_uncond, float omega);

struct SdsState {
    SdsConfig cfg;
    nerf::RadianceField field;
    nn::AdamW opt;
    int64_t step = 0;

    explicit SdsState(const SdsConfig& c)
        : cfg(c), field(c.field, c.seed), opt(field.params().vars(), c.lr) {}
};

struct StepStats {
    float sds_loss = 0.0f;
    float orient_loss = 0.0f;
    float opacity_loss = 0.0f;
    int t = 0;
};

/// One distillation update: sample camera + timestep, render, diffuse, score
/// with the frozen denoiser via cfg_3d, and step the field through the
/// surrogate loss omega(t) * <stopgrad(eps_hat - eps), x> (omega(t) = sigma_t^2)
/// plus regularizers. The denoiser is never mutated.
StepStats sds_step(SdsState& state, const Denoiser& model, const std::vector<int>& caption_ids,
                   const NoiseSchedule& schedule, Rng& rng);

struct DistillResult {
    std::string final_checkpoint;
    std::string occupancy_path;
    float final_loss = 0.0f;
};

/// Full run: loads the frozen angle-to-image checkpoint, distills a field, and
/// writes config.json, loss.csv, periodic snapshots + turntable PNGs, the
/// final field checkpoint, and an occupancy grid into run_dir. Resumable from
/// a field checkpoint written by the same config (deterministic RNG replay).
DistillResult distill(const std::string& model_checkpoint, const std::string& dataset_dir,
                      const SdsConfig& cfg, const std::string& run_dir,
                      const std::string& resume_from = "");

}  // namespace gpsgen::sds

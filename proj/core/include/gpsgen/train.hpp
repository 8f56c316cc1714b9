#pragma once

#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "gpsgen/denoiser.hpp"
#include "gpsgen/worldgen.hpp"

namespace gpsgen::diffusion {

struct TrainConfig {
    std::string mode = "city";  // "city" (text+GPS) or "angle" (text+azimuth bin)
    int steps = 2000;
    int batch_size = 8;
    float lr = 2e-3f;
    float weight_decay = 0.0f;
    uint64_t seed = 0;
    int T = 1000;
    std::string schedule = "linear";
    DropoutPolicy dropout;                 // 5% / 5% / 5% defaults
    // Timestep importance sampling: with this probability a batch element's t
    // is drawn from the top quarter [3T/4, T) instead of [0, T). The near-pure-
    // noise regime is where conditional generation is decided yet its loss
    // gradient is weakest; 0 (default) keeps the uniform draw.
    float t_high_bias = 0.0f;
    float lambda_preservation = 1.0f;      // Eq. weight between recon and preservation
    std::string preservation_dir;          // prior image set (angle mode)
    int checkpoint_every = 1000;
    DenoiserConfig model;
    // resolved from the dataset at train time; lets samplers run from the
    // checkpoint alone (prompt tokenization + tag normalization)
    std::vector<std::string> vocabulary;
    geo::BoundingBox box;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// One optimizer batch. Token sequences already reflect condition dropout.
struct TrainBatch {
    Tensor x0;                    // [N,H,W,3], values in [-1,1]
    std::vector<ag::Var> tokens;  // per-sample conditioning sequences
    std::vector<int> t;           // timesteps, each in [0,T)
    Tensor eps;                   // [N,H,W,3], standard normal
};

/// Per-sample forward diffusion, model prediction, and mean-over-everything
/// squared error (omega(t) = 1).
ag::Var recon_loss(const TrainBatch& batch, const Denoiser& model, const NoiseSchedule& schedule);

/// Identical MSE form; caller builds tokens with the pose condition nulled.
ag::Var preservation_loss(const TrainBatch& prior_batch, const Denoiser& model,
                          const NoiseSchedule& schedule);

/// In-memory training view of a dataset (images pre-scaled to [-1,1]).
struct TrainSet {
    worldgen::WorldSpec spec;
    std::vector<Tensor> images;            // each [H,W,3]
    std::vector<std::vector<int>> caption_ids;
    std::vector<geo::NormalizedGeo> ngeo;
    std::vector<int> angle_bin;

    static TrainSet load(const worldgen::Dataset& ds);
};

struct TrainResult {
    std::string final_checkpoint;
    float first_window_loss = 0.0f;  // mean loss over the first 100 steps
    float last_window_loss = 0.0f;   // mean loss over the last 100 steps
};

/// Full training run. Writes `config.json`, `loss.csv`, periodic
/// `ckpt_<step>.ckpt` and `final.ckpt` into run_dir; resumable from any
/// checkpoint it wrote. Deterministic under (config, dataset).
TrainResult train(const std::string& dataset_dir, const TrainConfig& cfg,
                  const std::string& run_dir, const std::string& resume_from = "");

Tensor image_to_tensor(const Image& img);   // [H,W,3] in [-1,1]
Image tensor_to_image(const Tensor& t);     // clamp + rescale to [0,1]

std::vector<int> caption_to_ids(const std::vector<std::string>& caption,
                                const std::vector<std::string>& vocabulary);

}  // namespace gpsgen::diffusion

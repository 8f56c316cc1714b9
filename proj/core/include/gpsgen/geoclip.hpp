#pragma once

#include <functional>
#include <string>

#include <nlohmann/json.hpp>

#include "gpsgen/geo.hpp"
#include "gpsgen/image.hpp"
#include "gpsgen/nn.hpp"
#include "gpsgen/worldgen.hpp"

namespace gpsgen::geoclip {

struct GpsClipConfig {
    int image_size = 32;
    int embed_dim = 64;      // C, shared by both towers
    float tau = 0.07f;
    int coord_hidden = 128;  // shared coordinate MLP width
    int coord_layers = 6;
    int frequencies = 10;    // Fourier encoding of each coordinate
    int base_channels = 16;  // image tower
    int steps = 1500;
    int batch_size = 64;
    float lr = 1e-3f;
    float weight_decay = 0.0f;
    uint64_t seed = 0;

    nlohmann::json to_json() const;
    static GpsClipConfig from_json(const nlohmann::json& j);
};

/// Contrastive GPS-image model: a small conv image tower and a shared-weight
/// coordinate MLP applied to u and v, concatenated, then projected. Both
/// towers emit L2-normalized rows of width C.
class GpsClipModel {
  public:
    GpsClipModel(const GpsClipConfig& cfg, uint64_t seed);

    /// x: [N,H,W,3] in [-1,1] -> [N,C], rows unit-norm.
    ag::Var embed_images(const Tensor& x) const;
    /// [N,C], rows unit-norm.
    ag::Var embed_gps(const std::vector<geo::NormalizedGeo>& tags) const;

    const GpsClipConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

  private:
    GpsClipConfig cfg_;
    nn::ParamStore ps_;
    // image tower: 4 stride-2 conv blocks, global mean pool, projection
    std::vector<nn::Conv2d> convs_;
    std::vector<nn::GroupNorm> norms_;
    nn::Linear img_proj_;
    // coordinate tower (weights shared across u and v)
    std::vector<nn::Linear> coord_mlp_;
    nn::Linear gps_proj_;
};

/// L2-normalize rows (exposed for tests).
ag::Var normalize_rows(const ag::Var& x, float eps = 1e-12f);

/// Symmetric InfoNCE: mean of image->gps and gps->image cross-entropies over
/// logits (img @ gps^T) / tau with diagonal targets. Requires n >= 2.
ag::Var contrastive_loss(const ag::Var& img_emb, const ag::Var& gps_emb, float tau);

struct GpsClipTrainResult {
    std::string final_checkpoint;
    float final_loss = 0.0f;
};

/// Trains on a city dataset's (image, tag) pairs; writes config.json,
/// loss.csv, and final.ckpt into run_dir. Deterministic under seed.
GpsClipTrainResult train_gps_clip(const std::string& dataset_dir, const GpsClipConfig& cfg,
                                  const std::string& run_dir);

GpsClipModel load_gps_clip(const std::string& checkpoint_path);

/// 100 x mean cosine similarity between each image and its own tag.
/// images: each [H,W,3] in [-1,1].
double gps_score(const GpsClipModel& model, const std::vector<Tensor>& images,
                 const std::vector<geo::NormalizedGeo>& tags);

/// Top-1 retrieval: match each image to its own tag among all tags.
double retrieval_top1(const GpsClipModel& model, const std::vector<Tensor>& images,
                      const std::vector<geo::NormalizedGeo>& tags);

// ---- angle classifier ----

struct AngleClassifierConfig {
    int image_size = 32;
    int base_channels = 16;
    int steps = 1500;
    int batch_size = 64;
    float lr = 1e-3f;
    uint64_t seed = 0;
    float holdout_fraction = 0.2f;

    nlohmann::json to_json() const;
    static AngleClassifierConfig from_json(const nlohmann::json& j);
};

/// Small conv net: image -> 36 angle-bin logits. Bins absent from the training
/// set are masked out of predictions.
class AngleClassifier {
  public:
    AngleClassifier(const AngleClassifierConfig& cfg, uint64_t seed);

    /// x: [N,H,W,3] in [-1,1] -> [N,36] logits (masked bins at -1e30).
    ag::Var logits(const Tensor& x) const;
    std::vector<int> classify(const Tensor& x) const;

    const AngleClassifierConfig& config() const { return cfg_; }
    std::vector<uint8_t>& bin_mask() { return bin_present_; }
    const std::vector<uint8_t>& bin_mask() const { return bin_present_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

  private:
    AngleClassifierConfig cfg_;
    nn::ParamStore ps_;
    std::vector<nn::Conv2d> convs_;
    std::vector<nn::GroupNorm> norms_;
    nn::Linear head_;
    std::vector<uint8_t> bin_present_ = std::vector<uint8_t>(geo::kAngleBins, 1);
};

struct AngleTrainResult {
    std::string final_checkpoint;
    double holdout_accuracy = 0.0;
    int missing_bins = 0;  // bins with zero training samples (warned + masked)
};

/// Trains on a landmark dataset's (image, azimuth_bin) pairs with a held-out
/// split; writes config.json and final.ckpt into run_dir.
AngleTrainResult train_angle_classifier(const std::string& dataset_dir,
                                        const AngleClassifierConfig& cfg,
                                        const std::string& run_dir);

AngleClassifier load_angle_classifier(const std::string& checkpoint_path);

/// Table-2 protocol: `generate(bin, rep)` produces one image ([H,W,3] in
/// [-1,1]) per (bin, repetition); reps images per bin are classified and
/// scored against the conditioning bin. Returns top-1 accuracy in percent.
double angle_accuracy(const std::function<Tensor(int bin, int rep)>& generate,
                      const AngleClassifier& classifier, int reps = 10);

inline constexpr double kAngleChancePercent = 100.0 / geo::kAngleBins;  // 2.78%

}  // namespace gpsgen::geoclip

#pragma once

#include <nlohmann/json.hpp>

#include "gpsgen/geo.hpp"
#include "gpsgen/nn.hpp"
#include "gpsgen/schedule.hpp"

namespace gpsgen::diffusion {

enum class CondMode { Gps, Angle };

struct DenoiserConfig {
    int image_size = 32;
    int base_channels = 16;  // channels at full resolution; doubled after downsampling
    int token_width = 64;    // D
    int attn_dim = 32;
    int time_dim = 64;
    int max_tokens = 8;
    int vocab_size = 0;
    int groups = 4;
    int head_hidden = 64;  // hidden width of the 2-layer coordinate MLP
    CondMode cond_mode = CondMode::Gps;

    nlohmann::json to_json() const;
    static DenoiserConfig from_json(const nlohmann::json& j);
};

/// Which conditioning signals survive dropout for one training sample.
enum class CondKind { Full, TextOnly, GeoOnly, Null };

struct DropoutPolicy {
    float p_text_only = 0.05f;
    float p_gps_only = 0.05f;
    float p_uncond = 0.05f;
};

CondKind apply_dropout(const DropoutPolicy& policy, Rng& rng);

/// Conditional eps-predicting UNet: two resolutions, residual conv blocks with
/// per-channel timestep bias, and cross-attention from image features to the
/// conditioning token sequence at the lower resolution. Token sequences are
/// text-token embeddings optionally followed by GPS tokens g = [f(u), f(v)]
/// or one angle token g' (absent conditions collapse to one learned null token).
class Denoiser {
  public:
    Denoiser(DenoiserConfig cfg, uint64_t init_seed);

    const DenoiserConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

    // ---- conditioning token builders ([L, D] sequences) ----
    ag::Var tokens_text(const std::vector<int>& caption_ids) const;
    ag::Var tokens_geo(const geo::NormalizedGeo& n) const;
    ag::Var tokens_angle(const geo::AngleBin& b) const;
    ag::Var tokens_null() const;
    /// text ⊕ geo-or-angle per CondKind (Angle mode uses the bin, Gps mode the coords).
    ag::Var build_tokens(CondKind kind, const std::vector<int>& caption_ids,
                         const geo::NormalizedGeo& n, const geo::AngleBin& b) const;
    /// preservation variant: text ⊕ null token (condition explicitly zeroed)
    ag::Var tokens_text_nulled(const std::vector<int>& caption_ids) const;

    /// z: [N,H,W,3], tokens: one [L_i, D] sequence per sample, t: one timestep
    /// per sample. Returns predicted noise with the input shape.
    ag::Var forward(const ag::Var& z, const std::vector<ag::Var>& tokens,
                    const std::vector<int>& t) const;

    /// Value-only batch forward (no tape).
    Tensor predict(const Tensor& z, const std::vector<ag::Var>& tokens,
                   const std::vector<int>& t) const;

  private:
    DenoiserConfig cfg_;
    nn::ParamStore ps_;

    nn::Embedding text_table_;
    ag::Var null_token_;
    geo::CoordHead coord_head_;  // GPS coords or angle value, per cond_mode

    nn::Linear time_l1_, time_l2_;
    nn::Linear time_to_c1_, time_to_c2a_, time_to_c2b_, time_to_c1u_;

    nn::Conv2d conv_in_;
    // full-res residual block
    nn::GroupNorm gn_a1_, gn_a2_;
    nn::Conv2d conv_a1_, conv_a2_;
    // downsample + two half-res residual blocks around cross-attention
    nn::Conv2d conv_down_;
    nn::GroupNorm gn_b1_, gn_b2_;
    nn::Conv2d conv_b1_, conv_b2_;
    nn::LayerNorm attn_ln_;
    nn::Linear attn_q_, attn_k_, attn_v_, attn_o_;
    nn::GroupNorm gn_c1_, gn_c2_;
    nn::Conv2d conv_c1_, conv_c2_;
    // upsample, skip fuse, output
    nn::Conv2d conv_up_, conv_fuse_;
    nn::GroupNorm gn_out_;
    nn::Conv2d conv_out_;

    ag::Var res_block(const ag::Var& x, const nn::GroupNorm& gn1, const nn::Conv2d& c1,
                      const nn::GroupNorm& gn2, const nn::Conv2d& c2, const ag::Var& tbias,
                      int n, int h, int w, int c) const;
    ag::Var cross_attention(const ag::Var& x, const std::vector<ag::Var>& tokens, int n, int h,
                            int w, int c) const;
    ag::Var time_embedding(const std::vector<int>& t) const;
};

}  // namespace gpsgen::diffusion

#include "gpsgen/denoiser.hpp"

#include <cmath>

namespace gpsgen::diffusion {

using ag::Var;
using json = nlohmann::json;

json DenoiserConfig::to_json() const {
    json j;
    j["image_size"] = image_size;
    j["base_channels"] = base_channels;
    j["token_width"] = token_width;
    j["attn_dim"] = attn_dim;
    j["time_dim"] = time_dim;
    j["max_tokens"] = max_tokens;
    j["vocab_size"] = vocab_size;
    j["groups"] = groups;
    j["head_hidden"] = head_hidden;
    j["cond_mode"] = cond_mode == CondMode::Gps ? "gps" : "angle";
    return j;
}

DenoiserConfig DenoiserConfig::from_json(const json& j) {
    DenoiserConfig c;
    c.image_size = j.at("image_size");
    c.base_channels = j.at("base_channels");
    c.token_width = j.at("token_width");
    c.attn_dim = j.at("attn_dim");
    c.time_dim = j.at("time_dim");
    c.max_tokens = j.at("max_tokens");
    c.vocab_size = j.at("vocab_size");
    c.groups = j.at("groups");
    c.head_hidden = j.at("head_hidden");
    c.cond_mode = j.at("cond_mode") == "gps" ? CondMode::Gps : CondMode::Angle;
    return c;
}

CondKind apply_dropout(const DropoutPolicy& policy, Rng& rng) {
    double u = rng.uniform();
    if (u < policy.p_uncond) return CondKind::Null;
    if (u < policy.p_uncond + policy.p_text_only) return CondKind::TextOnly;
    if (u < policy.p_uncond + policy.p_text_only + policy.p_gps_only) return CondKind::GeoOnly;
    return CondKind::Full;
}

Denoiser::Denoiser(DenoiserConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    if (cfg_.image_size % 2 != 0)
        throw std::invalid_argument("Denoiser: image_size must be even");
    if (cfg_.vocab_size <= 0) throw std::invalid_argument("Denoiser: vocab_size must be set");
    Rng rng(init_seed);
    const int c1 = cfg_.base_channels, c2 = 2 * cfg_.base_channels;
    const int d = cfg_.token_width, a = cfg_.attn_dim, td = cfg_.time_dim;

    text_table_ = nn::Embedding(ps_, "cond.text", cfg_.vocab_size, d, rng);
    null_token_ = ps_.add("cond.null", nn::init_normal({1, d}, 0.02f, rng));
    coord_head_ = geo::CoordHead(ps_, "cond.coord", geo::kDefaultFrequencies, cfg_.head_hidden, d, rng);

    time_l1_ = nn::Linear(ps_, "time.l1", td, td, rng);
    time_l2_ = nn::Linear(ps_, "time.l2", td, td, rng);
    time_to_c1_ = nn::Linear(ps_, "time.to_c1", td, c1, rng);
    time_to_c2a_ = nn::Linear(ps_, "time.to_c2a", td, c2, rng);
    time_to_c2b_ = nn::Linear(ps_, "time.to_c2b", td, c2, rng);
    time_to_c1u_ = nn::Linear(ps_, "time.to_c1u", td, c1, rng);

    conv_in_ = nn::Conv2d(ps_, "unet.in", 3, c1, 3, 1, 1, rng);
    gn_a1_ = nn::GroupNorm(ps_, "unet.a.gn1", c1, cfg_.groups);
    conv_a1_ = nn::Conv2d(ps_, "unet.a.conv1", c1, c1, 3, 1, 1, rng);
    gn_a2_ = nn::GroupNorm(ps_, "unet.a.gn2", c1, cfg_.groups);
    conv_a2_ = nn::Conv2d(ps_, "unet.a.conv2", c1, c1, 3, 1, 1, rng, /*zero_init=*/true);

    conv_down_ = nn::Conv2d(ps_, "unet.down", c1, c2, 3, 2, 1, rng);
    gn_b1_ = nn::GroupNorm(ps_, "unet.b.gn1", c2, cfg_.groups);
    conv_b1_ = nn::Conv2d(ps_, "unet.b.conv1", c2, c2, 3, 1, 1, rng);
    gn_b2_ = nn::GroupNorm(ps_, "unet.b.gn2", c2, cfg_.groups);
    conv_b2_ = nn::Conv2d(ps_, "unet.b.conv2", c2, c2, 3, 1, 1, rng, /*zero_init=*/true);

    attn_ln_ = nn::LayerNorm(ps_, "attn.ln", c2);
    attn_q_ = nn::Linear(ps_, "attn.q", c2, a, rng);
    attn_k_ = nn::Linear(ps_, "attn.k", d, a, rng);
    attn_v_ = nn::Linear(ps_, "attn.v", d, a, rng);
    attn_o_ = nn::Linear(ps_, "attn.o", a, c2, rng, /*zero_init=*/true);

    gn_c1_ = nn::GroupNorm(ps_, "unet.c.gn1", c2, cfg_.groups);
    conv_c1_ = nn::Conv2d(ps_, "unet.c.conv1", c2, c2, 3, 1, 1, rng);
    gn_c2_ = nn::GroupNorm(ps_, "unet.c.gn2", c2, cfg_.groups);
    conv_c2_ = nn::Conv2d(ps_, "unet.c.conv2", c2, c2, 3, 1, 1, rng, /*zero_init=*/true);

    conv_up_ = nn::Conv2d(ps_, "unet.up", c2, c1, 3, 1, 1, rng);
    conv_fuse_ = nn::Conv2d(ps_, "unet.fuse", 2 * c1, c1, 3, 1, 1, rng);
    gn_out_ = nn::GroupNorm(ps_, "unet.out.gn", c1, cfg_.groups);
    conv_out_ = nn::Conv2d(ps_, "unet.out.conv", c1, 3, 3, 1, 1, rng, /*zero_init=*/true);
}

Var Denoiser::tokens_text(const std::vector<int>& caption_ids) const {
    if (caption_ids.empty()) throw std::invalid_argument("tokens_text: empty caption");
    return text_table_(caption_ids);
}

Var Denoiser::tokens_geo(const geo::NormalizedGeo& n) const {
    if (cfg_.cond_mode != CondMode::Gps)
        throw std::logic_error("tokens_geo: model is angle-conditioned");
    return geo::embed_gps(n, coord_head_);
}

Var Denoiser::tokens_angle(const geo::AngleBin& b) const {
    if (cfg_.cond_mode != CondMode::Angle)
        throw std::logic_error("tokens_angle: model is GPS-conditioned");
    return geo::embed_angle(b, coord_head_);
}

Var Denoiser::tokens_null() const { return null_token_; }

Var Denoiser::tokens_text_nulled(const std::vector<int>& caption_ids) const {
    return ag::concat_rows({tokens_text(caption_ids), null_token_});
}

Var Denoiser::build_tokens(CondKind kind, const std::vector<int>& caption_ids,
                           const geo::NormalizedGeo& n, const geo::AngleBin& b) const {
    auto geo_tokens = [&] {
        return cfg_.cond_mode == CondMode::Gps ? tokens_geo(n) : tokens_angle(b);
    };
    switch (kind) {
        case CondKind::Full: return ag::concat_rows({tokens_text(caption_ids), geo_tokens()});
        case CondKind::TextOnly: return tokens_text(caption_ids);
        case CondKind::GeoOnly: return geo_tokens();
        default: return tokens_null();
    }
}

Var Denoiser::time_embedding(const std::vector<int>& t) const {
    const int td = cfg_.time_dim;
    const int half = td / 2;
    Tensor emb({static_cast<int>(t.size()), td});
    for (size_t i = 0; i < t.size(); ++i) {
        for (int k = 0; k < half; ++k) {
            double freq = std::exp(-std::log(10000.0) * k / (half - 1));
            emb[static_cast<int64_t>(i) * td + k] = static_cast<float>(std::sin(t[i] * freq));
            emb[static_cast<int64_t>(i) * td + half + k] =
                static_cast<float>(std::cos(t[i] * freq));
        }
    }
    return time_l2_(ag::silu(time_l1_(ag::constant(std::move(emb)))));
}

namespace {

/// x [N,H,W,C] + per-sample channel bias [N,C]
Var add_channel_bias(const Var& x, const Var& bias, int n, int h, int w, int c) {
    Var flat = ag::reshape(x, {n * h * w, c});
    Var rep = ag::repeat_rows(bias, h * w);
    return ag::reshape(ag::add(flat, rep), {n, h, w, c});
}

}  // namespace

Var Denoiser::res_block(const Var& x, const nn::GroupNorm& gn1, const nn::Conv2d& c1conv,
                        const nn::GroupNorm& gn2, const nn::Conv2d& c2conv, const Var& tbias,
                        int n, int h, int w, int c) const {
    Var hvar = c1conv(ag::silu(gn1(x)));
    hvar = add_channel_bias(hvar, tbias, n, h, w, c);
    hvar = c2conv(ag::silu(gn2(hvar)));
    return ag::add(x, hvar);
}

Var Denoiser::cross_attention(const Var& x, const std::vector<Var>& tokens, int n, int h, int w,
                              int c) const {
    const int hw = h * w;
    const float inv_sqrt_a = 1.0f / std::sqrt(static_cast<float>(cfg_.attn_dim));
    Var flat = ag::reshape(x, {n * hw, c});
    Var normed = attn_ln_(flat);
    std::vector<Var> outs;
    outs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Var xi = ag::slice_rows(normed, static_cast<int64_t>(i) * hw, hw);
        Var q = attn_q_(xi);
        Var k = attn_k_(tokens[static_cast<size_t>(i)]);
        Var v = attn_v_(tokens[static_cast<size_t>(i)]);
        Var logits = ag::scale(ag::matmul(q, ag::transpose(k)), inv_sqrt_a);
        Var att = ag::softmax_rows(logits);
        outs.push_back(attn_o_(ag::matmul(att, v)));
    }
    Var delta = ag::concat_rows(outs);
    return ag::reshape(ag::add(flat, delta), {n, h, w, c});
}

Var Denoiser::forward(const Var& z, const std::vector<Var>& tokens,
                      const std::vector<int>& t) const {
    if (z->value.rank() != 4 || z->value.dim(3) != 3)
        throw std::invalid_argument("Denoiser::forward: z must be [N,H,W,3]");
    const int n = z->value.dim(0), h = z->value.dim(1), w = z->value.dim(2);
    if (static_cast<int>(tokens.size()) != n || static_cast<int>(t.size()) != n)
        throw std::invalid_argument("Denoiser::forward: batch size mismatch");
    for (const auto& tok : tokens) {
        int l = static_cast<int>(tok->value.rows2d());
        if (l < 1 || l > cfg_.max_tokens)
            throw std::invalid_argument("Denoiser::forward: token count out of [1, max]");
        if (tok->value.cols2d() != cfg_.token_width)
            throw std::invalid_argument("Denoiser::forward: token width mismatch");
    }
    const int c1 = cfg_.base_channels, c2 = 2 * cfg_.base_channels;
    const int h2 = h / 2, w2 = w / 2;

    Var temb = time_embedding(t);

    Var x = conv_in_(z);
    Var skip = res_block(x, gn_a1_, conv_a1_, gn_a2_, conv_a2_, time_to_c1_(temb), n, h, w, c1);
    Var y = conv_down_(skip);
    y = res_block(y, gn_b1_, conv_b1_, gn_b2_, conv_b2_, time_to_c2a_(temb), n, h2, w2, c2);
    y = cross_attention(y, tokens, n, h2, w2, c2);
    y = res_block(y, gn_c1_, conv_c1_, gn_c2_, conv_c2_, time_to_c2b_(temb), n, h2, w2, c2);
    y = conv_up_(ag::upsample2x(y));
    y = add_channel_bias(y, time_to_c1u_(temb), n, h, w, c1);
    // channel-concat with the skip path: reshape to rows of channels
    Var cat2d = ag::concat_rows({ag::transpose(ag::reshape(skip, {n * h * w, c1})),
                                 ag::transpose(ag::reshape(y, {n * h * w, c1}))});
    Var fused = ag::reshape(ag::transpose(cat2d), {n, h, w, 2 * c1});
    Var out = conv_fuse_(fused);
    out = conv_out_(ag::silu(gn_out_(out)));
    return out;
}

Tensor Denoiser::predict(const Tensor& z, const std::vector<Var>& tokens,
                         const std::vector<int>& t) const {
    ag::NoGradGuard ng;
    return forward(ag::constant(z), tokens, t)->value;
}

}  // namespace gpsgen::diffusion

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gpsgen/checkpoint.hpp"
#include "gpsgen/denoiser.hpp"

using namespace gpsgen;
using namespace gpsgen::diffusion;

namespace {

DenoiserConfig small_cfg() {
    DenoiserConfig cfg;
    cfg.image_size = 8;
    cfg.base_channels = 8;
    cfg.token_width = 16;
    cfg.attn_dim = 8;
    cfg.time_dim = 16;
    cfg.vocab_size = 12;
    cfg.groups = 2;
    cfg.head_hidden = 16;
    return cfg;
}

Tensor rand_images(int n, int hw, Rng& rng) {
    Tensor t({n, hw, hw, 3});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
    return t;
}

}  // namespace

TEST_CASE("token builders emit the documented sequence lengths") {
    Denoiser d(small_cfg(), 5);
    auto text = d.tokens_text({0, 3, 7});
    CHECK(text->value.dim(0) == 3);
    CHECK(text->value.dim(1) == 16);
    auto g = d.tokens_geo({0.25, -0.5});
    CHECK(g->value.dim(0) == 2);  // one token per coordinate
    auto null = d.tokens_null();
    CHECK(null->value.dim(0) == 1);

    auto full = d.build_tokens(CondKind::Full, {1, 2}, {0.1, 0.2}, {0});
    CHECK(full->value.dim(0) == 4);  // text(2) + gps(2)
    auto text_only = d.build_tokens(CondKind::TextOnly, {1, 2}, {0.1, 0.2}, {0});
    CHECK(text_only->value.dim(0) == 2);
    auto geo_only = d.build_tokens(CondKind::GeoOnly, {1, 2}, {0.1, 0.2}, {0});
    CHECK(geo_only->value.dim(0) == 2);
    auto uncond = d.build_tokens(CondKind::Null, {1, 2}, {0.1, 0.2}, {0});
    CHECK(uncond->value.dim(0) == 1);

    auto nulled = d.tokens_text_nulled({1, 2, 3});
    CHECK(nulled->value.dim(0) == 4);  // text(3) + null(1)
}

TEST_CASE("angle conditioning produces one token") {
    DenoiserConfig cfg = small_cfg();
    cfg.cond_mode = CondMode::Angle;
    Denoiser d(cfg, 5);
    auto a = d.tokens_angle({17});
    CHECK(a->value.dim(0) == 1);
    auto full = d.build_tokens(CondKind::Full, {1}, {0.0, 0.0}, {17});
    CHECK(full->value.dim(0) == 2);  // text(1) + angle(1)
}

TEST_CASE("token builders validate ids") {
    Denoiser d(small_cfg(), 5);
    CHECK_THROWS(d.tokens_text({12}));   // vocab_size = 12 -> max id 11
    CHECK_THROWS(d.tokens_text({-1}));
    CHECK_THROWS(d.tokens_angle({36}));
    CHECK_THROWS(d.tokens_angle({-1}));
}

TEST_CASE("forward returns input-shaped noise and is deterministic per init seed") {
    Denoiser d1(small_cfg(), 42);
    Denoiser d2(small_cfg(), 42);
    Denoiser d3(small_cfg(), 43);
    CHECK(param_hash(d1.params()) == param_hash(d2.params()));
    CHECK(param_hash(d1.params()) != param_hash(d3.params()));

    Rng rng(1);
    Tensor z = rand_images(2, 8, rng);
    std::vector<ag::Var> toks{d1.build_tokens(CondKind::Full, {0, 1}, {0.1, -0.3}, {0}),
                              d1.tokens_null()};
    ag::Var out1 = d1.forward(ag::constant(z), toks, {10, 50});
    CHECK(out1->value.shape == z.shape);
    ag::Var out2 = d2.forward(ag::constant(z), toks, {10, 50});
    CHECK(out1->value.data == out2->value.data);
}

TEST_CASE("predict matches forward values exactly") {
    Denoiser d(small_cfg(), 7);
    Rng rng(2);
    Tensor z = rand_images(3, 8, rng);
    std::vector<ag::Var> toks{d.tokens_text({0, 1}), d.tokens_null(), d.tokens_geo({0.5, 0.5})};
    std::vector<int> t{3, 60, 99};
    ag::Var fwd = d.forward(ag::constant(z), toks, t);
    Tensor pred = d.predict(z, toks, t);
    REQUIRE(pred.shape == fwd->value.shape);
    CHECK(pred.data == fwd->value.data);
}

TEST_CASE("output depends on conditioning, timestep, and input") {
    Denoiser d(small_cfg(), 9);
    // the output conv is zero-initialized, so nudge every parameter off zero
    // to make the untrained network's output sensitive to its inputs
    Rng prng(99);
    for (auto& v : d.params().vars())
        for (int64_t i = 0; i < v->value.size(); ++i)
            v->value[i] += 0.02f * static_cast<float>(prng.normal());
    Rng rng(3);
    Tensor z = rand_images(1, 8, rng);
    auto run = [&](ag::Var toks, int t) { return d.predict(z, {toks}, {t}); };
    Tensor base = run(d.tokens_null(), 50);
    CHECK(run(d.tokens_text({2}), 50).data != base.data);
    CHECK(run(d.tokens_null(), 51).data != base.data);
    Tensor z2 = z;
    z2[0] += 0.5f;
    CHECK(d.predict(z2, {d.tokens_null()}, {50}).data != base.data);
}

TEST_CASE("conditioning dropout hits its marginal rates") {
    DropoutPolicy pol;  // 5/5/5
    Rng rng(123);
    const int n = 40000;
    int text = 0, gps = 0, null = 0, full = 0;
    for (int i = 0; i < n; ++i) {
        switch (apply_dropout(pol, rng)) {
            case CondKind::TextOnly: ++text; break;
            case CondKind::GeoOnly: ++gps; break;
            case CondKind::Null: ++null; break;
            case CondKind::Full: ++full; break;
        }
    }
    // binomial std at p=0.05, n=4e4 is ~0.0011; allow 4 sigma
    auto frac = [&](int c) { return static_cast<double>(c) / n; };
    CHECK(std::fabs(frac(text) - 0.05) < 0.0045);
    CHECK(std::fabs(frac(gps) - 0.05) < 0.0045);
    CHECK(std::fabs(frac(null) - 0.05) < 0.0045);
    CHECK(std::fabs(frac(full) - 0.85) < 0.008);
}

TEST_CASE("config serialization round-trips") {
    DenoiserConfig cfg = small_cfg();
    cfg.cond_mode = CondMode::Angle;
    DenoiserConfig back = DenoiserConfig::from_json(cfg.to_json());
    CHECK(back.image_size == cfg.image_size);
    CHECK(back.base_channels == cfg.base_channels);
    CHECK(back.token_width == cfg.token_width);
    CHECK(back.vocab_size == cfg.vocab_size);
    CHECK(back.cond_mode == CondMode::Angle);
}

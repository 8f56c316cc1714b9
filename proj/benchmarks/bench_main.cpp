#include <benchmark/benchmark.h>

#include "gpsgen/denoiser.hpp"
#include "gpsgen/geo.hpp"
#include "gpsgen/nerf.hpp"
#include "gpsgen/sampler.hpp"
#include "gpsgen/worldgen.hpp"

using namespace gpsgen;

namespace {

Tensor randn(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = static_cast<float>(rng.normal());
    return t;
}

diffusion::DenoiserConfig bench_model_cfg() {
    diffusion::DenoiserConfig cfg;
    cfg.image_size = 32;
    cfg.vocab_size = 12;
    return cfg;
}

void BM_PositionalEncode(benchmark::State& state) {
    double v = 0.37;
    for (auto _ : state) {
        auto e = geo::positional_encode(v, 10);
        benchmark::DoNotOptimize(e.data());
    }
}
BENCHMARK(BM_PositionalEncode);

void BM_AngleBinning(benchmark::State& state) {
    double a = -179.9;
    for (auto _ : state) {
        for (int i = 0; i < 1000; ++i)
            benchmark::DoNotOptimize(geo::discretize_angle({a + i * 0.36}).index);
    }
}
BENCHMARK(BM_AngleBinning);

void BM_Conv2d(benchmark::State& state) {
    Rng rng(1);
    int c = static_cast<int>(state.range(0));
    Tensor x = randn({1, 32, 32, c}, rng);
    Tensor w = randn({9 * c, c}, rng);
    Tensor b = Tensor::zeros({c});
    ag::NoGradGuard ng;
    for (auto _ : state) {
        ag::Var out = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), 3, 3, 1, 1);
        benchmark::DoNotOptimize(out->value.data.data());
    }
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32);

void BM_DenoiserPredict(benchmark::State& state) {
    diffusion::Denoiser model(bench_model_cfg(), 3);
    Rng rng(2);
    Tensor z = randn({1, 32, 32, 3}, rng);
    auto tokens = model.build_tokens(diffusion::CondKind::Full, {0, 1}, {0.2, -0.3}, {0});
    for (auto _ : state) {
        Tensor out = model.predict(z, {tokens}, {500});
        benchmark::DoNotOptimize(out.data.data());
    }
}
BENCHMARK(BM_DenoiserPredict);

void BM_DdimStepDualGuidance(benchmark::State& state) {
    diffusion::Denoiser model(bench_model_cfg(), 3);
    diffusion::NoiseSchedule sched = diffusion::build_schedule(1000);
    sampler::GuidanceConfig gc;
    auto guided = sampler::dual_cfg_fn(model, {0, 1}, {0.2, -0.3}, gc);
    Rng rng(4);
    Tensor z = randn({1, 32, 32, 3}, rng);
    for (auto _ : state) {
        Tensor eps = guided(z, 500);
        benchmark::DoNotOptimize(eps.data.data());
    }
}
BENCHMARK(BM_DdimStepDualGuidance);

void BM_NerfRender(benchmark::State& state) {
    nerf::NerfConfig cfg;
    nerf::RadianceField field(cfg, 5);
    nerf::CameraPose pose;
    pose.resolution = static_cast<int>(state.range(0));
    pose.elevation_deg = -15.0;
    ag::NoGradGuard ng;
    for (auto _ : state) {
        nerf::RenderOutput out = nerf::render(field, pose, 24);
        benchmark::DoNotOptimize(out.rgb->value.data.data());
    }
}
BENCHMARK(BM_NerfRender)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_CityRender(benchmark::State& state) {
    worldgen::WorldSpec spec = worldgen::WorldSpec::make_city(7, 32, 3, 3);
    geo::GeoTag tag{5.0, 5.0};
    uint64_t seed = 0;
    for (auto _ : state) {
        worldgen::Sample s = worldgen::render_city_sample(spec, tag, {spec.vocabulary[0]}, seed++);
        benchmark::DoNotOptimize(s.image.pixels.data());
    }
}
BENCHMARK(BM_CityRender);

}  // namespace

BENCHMARK_MAIN();

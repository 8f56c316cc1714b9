#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gpsgen/rng.hpp"
#include "gpsgen/schedule.hpp"

using namespace gpsgen;
using namespace gpsgen::diffusion;

TEST_CASE("abar equals the running product of alpha^2") {
    for (auto kind : {ScheduleKind::Linear, ScheduleKind::Cosine}) {
        NoiseSchedule s = build_schedule(100, kind);
        REQUIRE(s.T == 100);
        REQUIRE(static_cast<int>(s.abar.size()) == 100);
        double prod = 1.0;
        for (int t = 0; t < s.T; ++t) {
            prod *= static_cast<double>(s.alpha[t]) * s.alpha[t];
            CHECK(std::fabs(s.abar[t] - prod) <= 1e-10 * std::max(1.0, prod));
        }
    }
}

TEST_CASE("per-step coefficients are variance preserving") {
    for (auto kind : {ScheduleKind::Linear, ScheduleKind::Cosine}) {
        NoiseSchedule s = build_schedule(250, kind);
        for (int t = 0; t < s.T; ++t) {
            double a2b2 = static_cast<double>(s.alpha[t]) * s.alpha[t] +
                          static_cast<double>(s.beta[t]) * s.beta[t];
            CHECK(a2b2 == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(s.alpha[t] > 0.0f);
            CHECK(s.alpha[t] <= 1.0f);
            CHECK(s.sigma[t] == doctest::Approx(std::sqrt(1.0 - s.abar[t])).epsilon(1e-5));
        }
        // monotone noising
        for (int t = 1; t < s.T; ++t) CHECK(s.abar[t] <= s.abar[t - 1] + 1e-9f);
    }
}

TEST_CASE("closed-form diffusion matches iterated per-step noising") {
    NoiseSchedule s = build_schedule(50);
    Rng rng(21);
    Tensor x0({8});
    for (int64_t i = 0; i < x0.size(); ++i) x0[i] = static_cast<float>(rng.normal());

    // Iterating z_{t+1} = alpha z_t + beta eps with the SAME aggregate noise
    // realization as the closed form requires combining the per-step epsilons;
    // instead verify the deterministic part (eps = 0) and the std separately.
    Tensor zero_eps = Tensor::zeros({8});
    Tensor z = x0;
    for (int t = 0; t < s.T; ++t) {
        for (int64_t i = 0; i < z.size(); ++i) z[i] *= s.alpha[t];
        Tensor closed = forward_diffuse(x0, t, zero_eps, s);
        for (int64_t i = 0; i < z.size(); ++i)
            CHECK(std::fabs(closed[i] - z[i]) <= 1e-5f * std::max(1.0f, std::fabs(z[i])));
    }
}

TEST_CASE("forward_diffuse noise magnitude matches sigma (Monte Carlo)") {
    NoiseSchedule s = build_schedule(100);
    int t = 60;
    Rng rng(33);
    Tensor x0 = Tensor::zeros({4});
    const int n = 20000;
    double var = 0.0;
    for (int k = 0; k < n; ++k) {
        Tensor eps({4});
        for (int64_t i = 0; i < 4; ++i) eps[i] = static_cast<float>(rng.normal());
        Tensor z = forward_diffuse(x0, t, eps, s);
        for (int64_t i = 0; i < 4; ++i) var += static_cast<double>(z[i]) * z[i];
    }
    var /= 4.0 * n;
    double expect = 1.0 - s.abar[t];
    CHECK(std::fabs(var - expect) / expect < 0.05);  // within 5%
}

TEST_CASE("forward_diffuse preserves the signal coefficient") {
    NoiseSchedule s = build_schedule(40, ScheduleKind::Cosine);
    Tensor x0({3});
    x0.data = {1.0f, -2.0f, 0.5f};
    Tensor eps = Tensor::zeros({3});
    for (int t : {0, 17, 39}) {
        Tensor z = forward_diffuse(x0, t, eps, s);
        float c = std::sqrt(s.abar[t]);
        for (int64_t i = 0; i < 3; ++i) CHECK(z[i] == doctest::Approx(c * x0[i]).epsilon(1e-5));
    }
}

TEST_CASE("schedules require at least two steps") {
    CHECK_THROWS_AS(build_schedule(1), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(0), std::invalid_argument);
    CHECK_NOTHROW(build_schedule(2));
}

TEST_CASE("kind names round-trip") {
    CHECK(schedule_kind_from_name("linear") == ScheduleKind::Linear);
    CHECK(schedule_kind_from_name("cosine") == ScheduleKind::Cosine);
    CHECK(schedule_kind_name(ScheduleKind::Cosine) == "cosine");
    CHECK_THROWS(schedule_kind_from_name("quadratic"));
}

TEST_CASE("forward_diffuse validates t and shapes") {
    NoiseSchedule s = build_schedule(10);
    Tensor x0 = Tensor::zeros({2});
    Tensor eps = Tensor::zeros({2});
    CHECK_THROWS(forward_diffuse(x0, -1, eps, s));
    CHECK_THROWS(forward_diffuse(x0, 10, eps, s));
    Tensor bad = Tensor::zeros({3});
    CHECK_THROWS(forward_diffuse(x0, 3, bad, s));
}

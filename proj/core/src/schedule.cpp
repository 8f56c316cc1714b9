#include "gpsgen/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace gpsgen::diffusion {

ScheduleKind schedule_kind_from_name(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "cosine") return ScheduleKind::Cosine;
    throw std::invalid_argument("unknown schedule kind: " + s);
}

std::string schedule_kind_name(ScheduleKind k) {
    return k == ScheduleKind::Linear ? "linear" : "cosine";
}

NoiseSchedule build_schedule(int T, ScheduleKind kind) {
    if (T < 2) throw std::invalid_argument("build_schedule: T must be >= 2");
    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.alpha.resize(T);
    s.beta.resize(T);
    s.abar.resize(T);
    s.sigma.resize(T);

    std::vector<double> beta_var(T);
    if (kind == ScheduleKind::Linear) {
        double scale = 1000.0 / T;
        double lo = 1e-4 * scale, hi = 0.02 * scale;
        for (int t = 0; t < T; ++t)
            beta_var[t] = std::min(0.999, lo + (hi - lo) * t / (T - 1.0));
    } else {
        auto f = [](double u) {
            constexpr double off = 0.008;
            double v = std::cos((u + off) / (1.0 + off) * M_PI / 2.0);
            return v * v;
        };
        double prev_abar = 1.0;
        for (int t = 0; t < T; ++t) {
            double cur = f(static_cast<double>(t + 1) / T) / f(0.0);
            beta_var[t] = std::min(0.999, std::max(0.0, 1.0 - cur / prev_abar));
            prev_abar = cur;
        }
    }
    double abar = 1.0;
    for (int t = 0; t < T; ++t) {
        double a2 = 1.0 - beta_var[t];
        s.alpha[t] = std::sqrt(a2);
        s.beta[t] = std::sqrt(beta_var[t]);
        abar *= s.alpha[t] * s.alpha[t];
        s.abar[t] = abar;
        s.sigma[t] = std::sqrt(1.0 - abar);
    }
    return s;
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
    if (t < 0 || t >= s.T) throw std::out_of_range("forward_diffuse: timestep out of range");
    if (!x0.same_shape(eps))
        throw std::invalid_argument("forward_diffuse: x0/eps shape mismatch");
    float a = static_cast<float>(std::sqrt(s.abar[static_cast<size_t>(t)]));
    float b = static_cast<float>(s.sigma[static_cast<size_t>(t)]);
    Tensor z(x0.shape);
    for (int64_t i = 0; i < z.size(); ++i) z[i] = a * x0[i] + b * eps[i];
    return z;
}

}  // namespace gpsgen::diffusion

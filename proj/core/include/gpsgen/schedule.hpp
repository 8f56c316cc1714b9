#pragma once

#include <string>
#include <vector>

#include "gpsgen/tensor.hpp"

namespace gpsgen::diffusion {

enum class ScheduleKind { Linear, Cosine };

/// Variance-preserving discrete schedule: one step is
///   z_{t+1} = alpha[t] * z_t + beta[t] * eps_t,   alpha^2 + beta^2 = 1,
/// so abar[t] = prod_{s<=t} alpha[s]^2 is the cumulative signal power and
/// sigma[t] = sqrt(1 - abar[t]) the closed-form noise std.
struct NoiseSchedule {
    int T = 0;
    ScheduleKind kind = ScheduleKind::Linear;
    // double precision so the cumulative product identity holds to ~1e-14
    std::vector<double> alpha;  // per-step signal scale
    std::vector<double> beta;   // per-step noise scale
    std::vector<double> abar;   // cumulative signal power
    std::vector<double> sigma;  // sqrt(1 - abar)
};

ScheduleKind schedule_kind_from_name(const std::string& s);
std::string schedule_kind_name(ScheduleKind k);

/// T >= 2 required. The linear variant scales the classic 1e-4..0.02 variance
/// ramp by 1000/T so the endpoint noise level is step-count independent.
NoiseSchedule build_schedule(int T, ScheduleKind kind = ScheduleKind::Linear);

/// Closed form z_t = sqrt(abar[t]) * x0 + sigma[t] * eps.
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);

}  // namespace gpsgen::diffusion

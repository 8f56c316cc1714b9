#pragma once

#include <cmath>
#include <cstdint>

namespace gpsgen {

/// Deterministic RNG. Distribution mapping is hand-rolled (not std::
/// distributions, whose output is implementation-defined) so that seeded
/// runs are reproducible everywhere.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {
        // warm up splitmix so nearby seeds decorrelate
        for (int i = 0; i < 4; ++i) next();
    }

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n).
    uint64_t below(uint64_t n) { return next() % n; }

    /// Standard normal via Box-Muller (no cached spare; two uniforms per draw).
    double normal() {
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Child stream derived from this one (for parallel-safe substreams).
    Rng fork() { return Rng(next() ^ 0xd1b54a32d192ed03ull); }

  private:
    uint64_t state_;
};

}  // namespace gpsgen

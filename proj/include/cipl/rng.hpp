#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cipl {

// splitmix64; used to derive independent sub-seeds from (master seed, tag).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// mt19937 engine with self-contained real/int draws so results do not depend
// on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

    std::uint32_t next_u32() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return (next_u32() >> 8) * (1.0 / 16777216.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int uniform_int(int n) { return static_cast<int>(uniform() * n) % n; }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one value per call, the pair's twin is discarded to keep
    // the draw sequence simple to reason about.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-12) u1 = 1e-12;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::mt19937 eng_;
};

}  // namespace cipl

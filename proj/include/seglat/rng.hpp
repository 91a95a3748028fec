#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace seglat {

// Deterministic splitmix64 stream. Implementation-defined distributions from
// <random> are avoided so that identical seeds give identical bytes across
// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // Derives an independent substream, e.g. rng.fork("shuffle").
    Rng fork(std::string_view name) const {
        std::uint64_t h = 1469598103934665603ull;
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        return Rng(state_ ^ h);
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // Box-Muller; one draw per call, the pair partner is discarded for
    // stream simplicity.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Rejection-sampled truncation at +/- 2 stddev.
    double truncated_normal(double stddev) {
        for (;;) {
            double x = normal() * stddev;
            if (std::abs(x) <= 2.0 * stddev) return x;
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace seglat

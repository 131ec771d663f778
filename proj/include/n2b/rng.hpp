// Seeded, counter-friendly random streams. Everything in this project that
// draws randomness goes through RngStream so runs are reproducible from
// (seed) alone; independent substreams are derived with mix_seed.

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace n2b {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Derive an independent stream seed from a base seed and a path of indices.
inline std::uint64_t mix_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = base ^ 0xD1B54A32D192ED03ULL;
    (void)splitmix64_next(s);
    for (std::uint64_t w : path) {
        s ^= w + 0x9E3779B97F4A7C15ULL;
        (void)splitmix64_next(s);
    }
    return splitmix64_next(s);
}

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a) { return mix_seed(base, {a}); }

class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(seed) {
        // decorrelate trivially related seeds (0, 1, 2, ...)
        (void)splitmix64_next(state_);
    }

    std::uint64_t next_u64() { return splitmix64_next(state_); }

    // uniform in [0, 1), 53-bit resolution
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // standard normal via Box-Muller (one spare cached)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace n2b

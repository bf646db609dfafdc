#pragma once

#include <cmath>
#include <cstdint>

namespace rvqlab {

// splitmix64. Deterministic across platforms, unlike the standard library
// distributions, which is what lets corpora, codebooks and attack noise be
// reproduced bit for bit from a seed.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Mixes two words into a fresh stream seed (derived streams stay disjoint).
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2));
    return splitmix64(s);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

// Small deterministic RNG stream.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0. Modulo bias is irrelevant at
    // the scales used here (n << 2^64).
    uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; caches the second draw.
    double gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Avoid log(0).
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

private:
    uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace rvqlab

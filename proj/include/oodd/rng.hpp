#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace oodd {

namespace detail {

// SplitMix64 finalizer (Steele, Lea, Flood 2014).
inline uint64_t splitmix_finalize(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Derives a child seed from a parent seed and stream labels. The same
/// (seed, labels) pair yields the same child on every platform, which is what
/// makes datasets and training runs reproducible bit-for-bit.
inline uint64_t mix_seed(uint64_t seed, std::initializer_list<uint64_t> labels = {}) {
    uint64_t h = detail::splitmix_finalize(seed + 0x9E3779B97F4A7C15ull);
    for (uint64_t x : labels) {
        h = detail::splitmix_finalize(h ^ (x * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull));
    }
    return h;
}

inline uint64_t mix_seed(uint64_t seed, uint64_t a) { return mix_seed(seed, {a}); }
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) { return mix_seed(seed, {a, b}); }
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
    return mix_seed(seed, {a, b, c});
}

/// Counter-based SplitMix64 generator. Deliberately not std::mt19937: the
/// stream is pinned to a fixed algorithm so any implementation of this
/// pipeline can reproduce identical datasets from the same seeds.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return detail::splitmix_finalize(state_);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller. Consumes exactly two draws per call so
    /// streams stay aligned regardless of caller structure.
    double gaussian() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

private:
    uint64_t state_;
};

}  // namespace oodd

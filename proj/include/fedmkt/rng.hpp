#pragma once

// Deterministic randomness. Everything derives from a single run seed via
// tagged streams, and the uniform helpers avoid std:: distributions so the
// same seed produces the same draws on every standard library.

#include <cstdint>
#include <random>
#include <vector>

namespace fedmkt {

using Rng = std::mt19937_64;

// Stream tags keep independent consumers (data generation, per-participant
// init, per-phase shuffles) from sharing draws.
enum class Stream : uint64_t {
    world = 1,
    model_init = 2,
    private_epoch = 3,
    public_epoch = 4,
    eval = 5,
};

inline uint64_t mix64(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline Rng make_rng(uint64_t seed, Stream stream, uint64_t a = 0, uint64_t b = 0) {
    uint64_t s = mix64(seed);
    s = mix64(s ^ static_cast<uint64_t>(stream));
    s = mix64(s ^ a);
    s = mix64(s ^ b);
    return Rng(s);
}

// Uniform in [0, 1).
inline double uniform_double(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform in [lo, hi).
inline double uniform_double(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_double(rng);
}

// Uniform integer in [0, n). n must be > 0.
inline uint64_t uniform_index(Rng& rng, uint64_t n) {
    // Lemire's multiply-shift; bias is negligible at toy scale and the
    // mapping is fully deterministic.
    return static_cast<uint64_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

template <typename T>
void shuffle_inplace(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

// Index drawn from unnormalized nonnegative weights.
inline size_t weighted_index(Rng& rng, const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = uniform_double(rng) * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (r < acc) return i;
    }
    return weights.size() - 1;
}

}  // namespace fedmkt

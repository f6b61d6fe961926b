#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace specmoe {

// Bad configuration or malformed input file. The CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A runtime invariant was broken (pinning bug, capacity exhaustion, corrupted
// draft record). The CLI maps this to exit code 2.
struct InvariantError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// All randomness flows through mt19937_64, whose output sequence is fixed by
// the C++ standard, so a (seed, call order) pair replays bit-identically.
using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Independent stream seed derived from a base seed and up to two tags.
inline uint64_t substream(uint64_t seed, uint64_t tag0, uint64_t tag1 = 0) {
    return splitmix64(seed ^ splitmix64(tag0 ^ splitmix64(tag1)));
}

// Uniform double in [0, 1) using the top 53 bits of one mt19937_64 draw.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via the Marsaglia polar method. The pair's second variate
// is discarded so every weight consumes a fixed, documented draw pattern.
inline double gaussian(Rng& rng) {
    for (;;) {
        double u = 2.0 * uniform01(rng) - 1.0;
        double v = 2.0 * uniform01(rng) - 1.0;
        double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }
}

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t hash_tokens(const std::vector<int>& tokens) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (int t : tokens) {
        uint32_t v = static_cast<uint32_t>(t);
        h = fnv1a64(&v, sizeof(v), h);
    }
    return h;
}

}  // namespace specmoe

#pragma once

// Seed derivation for independent per-subsystem random sub-streams.

#include <cstdint>
#include <random>

namespace pulsebell {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Deterministic engine for sub-stream `tag` of a master seed. Distinct
// tags give independent streams, so toggling one subsystem never
// perturbs the draws of another.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t s = seed ^ (0xD1B54A32D192ED03ULL * (tag + 1));
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace pulsebell

#pragma once
// Seeded, splittable randomness. Every random quantity in the engine is
// derived from a 64-bit seed through SplitMix64 sub-streams, keyed by
// hashing (seed, purpose, ids...). No global state, no platform-dependent
// distributions.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace strmac {

// FNV-1a over a string literal; used to tag sub-stream purposes.
constexpr std::uint64_t purpose_tag(const char* s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (; *s != '\0'; ++s) {
        h ^= static_cast<unsigned char>(*s);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Order-sensitive combiner for deriving sub-stream seeds.
inline constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    return mix64(h + 0x9e3779b97f4a7c15ULL + v);
}

class SplitMix64 {
  public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        return mix64(z);
    }

    // Uniform in [0, 1).
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1]; safe as a log() argument.
    double next_open_double() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next() % span);
    }

    // Box-Muller; two uniforms per draw, no cached state.
    double next_gaussian() {
        const double u1 = next_open_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

  private:
    std::uint64_t state_;
};

// Seed for a named sub-stream: substream(seed, "tag", id0, id1, ...).
template <typename... Ids>
std::uint64_t substream(std::uint64_t seed, const char* purpose, Ids... ids) {
    std::uint64_t h = hash_combine(seed, purpose_tag(purpose));
    ((h = hash_combine(h, static_cast<std::uint64_t>(ids))), ...);
    return h;
}

} // namespace strmac

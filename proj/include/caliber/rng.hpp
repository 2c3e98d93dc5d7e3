#pragma once

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <string_view>

namespace caliber {

// Deterministic pseudo-randomness for the whole artifact.
//
// Generator: SplitMix64 (Steele, Lea & Flood 2014). State advances by the
// 64-bit golden-ratio constant and is scrambled by two xor-multiply rounds.
// Normal variates use the polar-free Box-Muller transform:
//   z0 = sqrt(-2 ln u1) * cos(2 pi u2),  z1 = sqrt(-2 ln u1) * sin(2 pi u2)
// with u1 in (0,1], u2 in [0,1). The sin branch is cached, so consecutive
// draws come in pairs from two uniforms.
//
// Every random stream in the library is derived from a root seed plus a
// purpose key via mix_key(), so independent subsystems never share a stream
// and any (seed, purpose, counters) tuple reproduces the same values.

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// FNV-1a over the bytes of a string; used to turn purpose strings into keys.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

// Folds a list of 64-bit parts into one key. Each part is absorbed through a
// SplitMix64 scramble so that nearby counter values map to unrelated keys.
inline std::uint64_t mix_key(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x8B72E2F7A80A1A6Bull;
    for (std::uint64_t p : parts) {
        h ^= p;
        splitmix64_next(h);
    }
    std::uint64_t s = h;
    return splitmix64_next(s);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64_next(state_); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller as documented above.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - next_unit();  // (0, 1], keeps log() finite
        const double u2 = next_unit();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        constexpr double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        has_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(next_unit() * static_cast<double>(n)) % n;
    }

  private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace caliber

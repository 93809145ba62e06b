#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vitloc {

inline constexpr int kArtifactVersion = 1;

// RSSI domain bounds in dB. -100 is the not-visible sentinel.
inline constexpr double kRssiFloorDb = -100.0;
inline constexpr double kRssiCeilDb = 0.0;

// ---------------------------------------------------------------------------
// Errors. One exception type per CLI error category.
// ---------------------------------------------------------------------------

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed files: CSV rows, checkpoint framing, truncated payloads.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or unknown keys in a run config.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite training loss.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core with explicit uniform/normal draws so
// emitted artifacts are byte-identical across standard libraries.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 significant bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; one value per call, no cached spare (keeps streams
    // insensitive to call parity).
    double normal(double mean, double sigma) {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sigma * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // True with probability p.
    bool bernoulli(double p) { return uniform01() < p; }

    std::size_t below(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

private:
    std::uint64_t state_;
};

// FNV-1a, used for labeled stream derivation and input fingerprints
// in run manifests.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64_u64(std::uint64_t v, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Independent RNG stream for (seed, label, index). Distinct labels give
// uncorrelated streams regardless of draw counts elsewhere.
inline Rng stream_rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
    std::uint64_t h = fnv1a64(label);
    h = fnv1a64_u64(index, h);
    h = fnv1a64_u64(seed, h);
    // splitmix64 state 0 is fine, but avoid the trivial all-zero stream anyway
    return Rng(h ^ 0x6a09e667f3bcc909ULL);
}

}  // namespace vitloc

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace maskfuse {

/// SplitMix64 generator (Steele, Lea & Flood). Chosen because its behaviour
/// is a short, exactly specified integer recurrence, so every run and every
/// reimplementation produces the same stream for the same seed.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1), using the top 53 bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Uniform integer in [0, n), n >= 1. Lemire multiply-shift reduction.
    std::uint64_t below(std::uint64_t n) {
        const auto wide = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(wide >> 64);
    }

    /// Standard normal via the Box-Muller transform. Consumes exactly two
    /// 64-bit draws per call (the sine branch is discarded), which keeps the
    /// stream layout trivial to reproduce elsewhere.
    double gaussian() {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;       // [0, 1)
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t state_;
};

/// Decorrelates a user seed into independent named streams (parameter init,
/// shuffling, data synthesis, per-fold training) so that consumers never
/// share or race a generator.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    SplitMix64 g(seed ^ (0xA0761D6478BD642FULL * (stream + 1)));
    return g.next_u64();
}

/// In-place Fisher-Yates shuffle driven by the supplied generator.
template <typename T>
void fisher_yates(std::vector<T>& items, SplitMix64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

} // namespace maskfuse

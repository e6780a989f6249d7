// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace chirploc {

/// Seedable generator whose output is identical on every platform.
///
/// The engine is std::mt19937_64, whose sequence is fixed by the standard.
/// The standard distributions are not, so uniform and normal variates are
/// derived here from raw 64-bit draws: uniform() uses the top 53 bits and
/// normal() uses the Marsaglia polar method with a cached second variate.
class RandomState {
public:
    explicit RandomState(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream for item `index` of a run seeded with `seed`.
    static RandomState for_stream(std::uint64_t seed, std::uint64_t index);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
    std::uint64_t below(std::uint64_t n);
    double normal();
    bool coin() { return (next_u64() >> 63) != 0; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// SplitMix64 finalizer, used to derive well-separated stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seeded Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, RandomState& rng);

}  // namespace chirploc

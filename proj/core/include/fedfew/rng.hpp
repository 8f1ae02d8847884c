#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fedfew {

/// Deterministic random stream. std::mt19937_64 output is pinned by the
/// standard; all double/int draws below are derived with explicit bit
/// arithmetic instead of std::*_distribution (whose results are
/// implementation-defined), so same seed means same bytes on every platform.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller (cos branch only; one pair per call).
    double normal();

    /// Uniform integer in [0, n). Rejection sampling, unbiased.
    std::uint64_t uniform_int(std::uint64_t n);

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n);

   private:
    std::mt19937_64 engine_;
};

/// Stable stream derivation: mixes a base seed with up to three tags
/// (stage, round, client id, ...) so concurrent workers get independent,
/// reproducible streams regardless of scheduling.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

}  // namespace fedfew

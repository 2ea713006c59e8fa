#pragma once

#include <cstdint>
#include <vector>

namespace dictnet {

/// Deterministic PRNG: xoshiro256++ seeded via splitmix64.
///
/// The algorithm is fixed by this library (not delegated to the standard
/// library) so that a given seed yields the same draw sequence on every
/// platform and toolchain. Floating-point helpers use explicit formulas:
/// uniform doubles take the top 53 bits of a draw, normals use Box-Muller,
/// bounded integers use rejection sampling, shuffles are Fisher-Yates.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform();

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Unbiased uniform integer in [0, bound).
  std::uint64_t uniform_int(std::uint64_t bound);

  /// Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Derives an independent stream (for per-episode seeding).
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t state_[4];
};

}  // namespace dictnet

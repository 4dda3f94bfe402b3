#pragma once

#include <cstdint>

namespace latopt {

/// Counter-based 64-bit generator.
///
/// The i-th output of a stream is `mix64(key + (i + 1) * kGolden)`, where
/// `mix64` is the SplitMix64 finalizer and `key` is derived from the seed and
/// a stream id. Because every output is a pure function of (seed, stream,
/// counter) using integer arithmetic only, integer draws are identical on all
/// platforms. Substreams (`split`) give independent sequences per problem,
/// per restart, and so on without sharing state.
///
/// Real-valued helpers (`normal`, `poisson`) go through libm and are only
/// guaranteed bitwise-reproducible on a single platform.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  static constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Independent child stream; does not advance this generator.
  [[nodiscard]] CounterRng split(std::uint64_t stream) const noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  /// Uniform integer in [0, n), unbiased (rejection on the top range).
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) noexcept;
  bool bernoulli(double p) noexcept;
  /// Standard normal via Box-Muller; the spare deviate is cached.
  double normal() noexcept;
  /// Poisson(lambda) by Knuth's multiplication method (small lambda only).
  int poisson(double lambda) noexcept;

  [[nodiscard]] std::uint64_t key() const noexcept { return key_; }
  [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace latopt

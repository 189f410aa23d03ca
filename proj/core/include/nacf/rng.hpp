#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>

namespace nacf {

/// Counter-based generator: draw i of a stream is a pure function of
/// (key, i), so streams can be split and re-derived without shared state.
/// Distributions are implemented here rather than with <random> so that
/// sequences are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one value per call).
  double normal() noexcept;
  /// Uniform integer in [0, n); n must be > 0.
  std::size_t below(std::size_t n) noexcept;

  /// Independent child stream; the parent is left untouched.
  Rng split(std::uint64_t stream) const noexcept;

  template <class It>
  void shuffle(It first, It last) noexcept {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace nacf

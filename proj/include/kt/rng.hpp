#pragma once

// Counter-based Philox4x32-10 and the standard normal stream built on it.
// A normal variate is a pure function of (seed, sample, level, index), so
// results do not depend on thread count or evaluation order.

#include <array>
#include <cstdint>

namespace kt {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key) noexcept;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }

  // Fills out[0..n) with independent N(0,1) variates for (sample, level).
  // Box-Muller on 53-bit uniforms in (0,1); each Philox block gives two.
  void fill(std::uint64_t sample, std::uint32_t level, double* out, std::size_t n) const noexcept;

  // Uniform in (0,1) for (sample, level, index).
  double uniform(std::uint64_t sample, std::uint32_t level, std::uint32_t index) const noexcept;

 private:
  std::uint64_t seed_;
  PhiloxKey key_;
};

}  // namespace kt

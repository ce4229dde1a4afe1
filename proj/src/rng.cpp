#include "kt/rng.hpp"

#include <cmath>
#include <numbers>

namespace kt {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// 53-bit uniform strictly inside (0,1).
inline double open_uniform(std::uint32_t a, std::uint32_t b) noexcept {
  const std::uint64_t bits = (static_cast<std::uint64_t>(a) << 21) ^ (b >> 11);
  return (static_cast<double>(bits & ((std::uint64_t{1} << 53) - 1)) + 0.5) * 0x1.0p-53;
}

}  // namespace

PhiloxCounter philox4x32_10(PhiloxCounter c, PhiloxKey k) noexcept {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k[0] += kWeyl0;
      k[1] += kWeyl1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
  return c;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

NormalStream::NormalStream(std::uint64_t seed) noexcept : seed_(seed) {
  const std::uint64_t k = splitmix64(seed);
  key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

void NormalStream::fill(std::uint64_t sample, std::uint32_t level, double* out, std::size_t n) const noexcept {
  const auto lo = static_cast<std::uint32_t>(sample);
  const auto hi = static_cast<std::uint32_t>(sample >> 32);
  for (std::size_t k = 0; k < n; k += 2) {
    const auto block = philox4x32_10({lo, hi, level, static_cast<std::uint32_t>(k / 2)}, key_);
    const double u1 = open_uniform(block[0], block[1]);
    const double u2 = open_uniform(block[2], block[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[k] = radius * std::cos(angle);
    if (k + 1 < n) out[k + 1] = radius * std::sin(angle);
  }
}

double NormalStream::uniform(std::uint64_t sample, std::uint32_t level, std::uint32_t index) const noexcept {
  const auto block = philox4x32_10(
      {static_cast<std::uint32_t>(sample), static_cast<std::uint32_t>(sample >> 32), level, index}, key_);
  return open_uniform(block[0], block[1]);
}

}  // namespace kt

#pragma once

// Counter-based random numbers. Value k of a stream is a pure function of
// (seed, k), so any partition of the counter range across threads produces
// the same numbers. The mixer is SplitMix64 (Steele, Lea, Flood 2014).

#include <cmath>
#include <cstdint>
#include <numbers>

namespace crdnn::rng {

inline constexpr const char* kAlgorithm = "splitmix64-counter";

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent seed for a named sub-stream.
constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(seed ^ mix64(stream + 0x9e3779b97f4a7c15ULL));
}

constexpr std::uint64_t at(std::uint64_t seed, std::uint64_t counter) noexcept {
  return mix64(seed + (counter + 1) * 0x9e3779b97f4a7c15ULL);
}

/// Uniform in [0, 1) with 53 random bits.
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline double uniform_at(std::uint64_t seed, std::uint64_t counter) noexcept {
  return to_unit(at(seed, counter));
}

/// Exponential with the given mean via inverse CDF; always finite.
inline double exponential_at(std::uint64_t seed, std::uint64_t counter, double mean) noexcept {
  return -mean * std::log1p(-uniform_at(seed, counter));
}

/// Sequential view of a counter stream, for inherently serial consumers
/// (shuffles, weight init).
class Stream {
 public:
  explicit Stream(std::uint64_t seed) noexcept : seed_(seed) {}

  std::uint64_t next_u64() noexcept { return at(seed_, counter_++); }
  double next_uniform() noexcept { return to_unit(next_u64()); }

  /// Uniform integer in [0, bound) by rejection, bound >= 1.
  std::uint64_t next_below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % bound;
  }

  /// Standard normal by Box-Muller; one value per call, the sine branch is dropped.
  double next_normal() noexcept {
    const double u1 = 1.0 - next_uniform();  // (0, 1]
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace crdnn::rng

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace psba {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Derives an independent child seed from (seed, stream). Used to split work
/// across runs, pairs and samples without sharing generator state.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return detail::mix64(seed ^ detail::mix64(stream + detail::kGolden));
}

/// Counter-based generator: the i-th 64-bit output is
/// mix64(seed + (i + 1) * golden), i.e. SplitMix64 with an explicit counter.
/// The integer stream is identical on every platform. Normals use
/// Box-Muller on 53-bit uniforms.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return detail::mix64(seed_ + counter_ * detail::kGolden);
  }

  /// Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  /// Child generator for an independent stream; does not advance this one.
  SeededRng split(std::uint64_t stream) const noexcept {
    return SeededRng(derive_seed(seed_ ^ counter_, stream));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace psba

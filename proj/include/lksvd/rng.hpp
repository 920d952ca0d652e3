#pragma once

#include <cmath>
#include <cstdint>

// Counter-based randomness. Every draw in this library is a pure function of
// (seed, counter), built from the SplitMix64 output function: the k-th value
// of a stream is finalize(seed + (k+1)*GAMMA). This makes noise images,
// initializations and training trajectories reproducible, order-independent
// and safe to evaluate from any thread. Gaussians use Box-Muller on two
// consecutive stream values.

namespace lksvd {

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ull;

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// k-th output of the SplitMix64 stream with the given seed.
inline std::uint64_t stream_at(std::uint64_t seed, std::uint64_t k) {
  return mix64(seed + (k + 1) * kGoldenGamma);
}

/// Child seed for slot (a, b); gives every (training step, draw) and every
/// (image, sigma) pair its own independent stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b) {
  return mix64(mix64(seed + (a + 1) * kGoldenGamma) + (b + 1) * kGoldenGamma);
}

/// Maps 64 random bits to a double in the open interval (0, 1).
inline double unit_double(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal draw addressed by (seed, index). Consumes stream values
/// 2*index and 2*index+1.
inline double gaussian_at(std::uint64_t seed, std::uint64_t index) {
  const double u1 = unit_double(stream_at(seed, 2 * index));
  const double u2 = unit_double(stream_at(seed, 2 * index + 1));
  constexpr double kTwoPi = 6.28318530717958647692528676655900577;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

/// Sequential convenience wrapper over the counter scheme.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64() { return stream_at(seed_, counter_++); }
  double next_unit() { return unit_double(next_u64()); }

  /// Uniform in [-bound, bound).
  double next_symmetric(double bound) {
    return bound * (2.0 * next_unit() - 1.0);
  }

  double next_gaussian() {
    const double u1 = next_unit();
    const double u2 = next_unit();
    constexpr double kTwoPi = 6.28318530717958647692528676655900577;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  /// Uniform integer in [0, n). Fixed-point multiply; the modulo bias is
  /// below n / 2^64.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace lksvd

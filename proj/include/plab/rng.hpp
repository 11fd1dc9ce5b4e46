#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace plab {

/// Counter-based generator: draw k of stream s under seed x is a pure
/// function of (x, s, k). Independent streams (training data, resets,
/// exploration) therefore never perturb each other.
class Rng {
 public:
  constexpr Rng() = default;
  constexpr explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  [[nodiscard]] constexpr std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] constexpr std::uint64_t stream() const noexcept { return stream_; }
  [[nodiscard]] constexpr std::uint64_t counter() const noexcept { return counter_; }

  /// A new stream keyed by `id`, derived from this generator's identity
  /// (not its counter).
  [[nodiscard]] constexpr Rng split(std::uint64_t id) const noexcept {
    return Rng(seed_, mix(stream_ ^ mix(id + 0x632be59bd9b4e019ULL)));
  }

  constexpr std::uint64_t next_u64() noexcept {
    const std::uint64_t key = mix(seed_ ^ mix(stream_ + 0x9e3779b97f4a7c15ULL));
    return mix(key + (counter_++) * 0xd1342543de82ef95ULL);
  }

  /// Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; bias is < 2^-40 for the n used here.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (one draw per call; the pair partner is
  /// discarded so the counter advances by exactly two).
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  friend constexpr bool operator==(const Rng&, const Rng&) = default;

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace plab

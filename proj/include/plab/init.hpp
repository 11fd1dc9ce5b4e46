#pragma once

#include <cmath>
#include <cstdint>

#include "plab/error.hpp"
#include "plab/rng.hpp"
#include "plab/tensor.hpp"

namespace plab {

enum class InitKind { uniform_fan_in, constant };

/// Distribution a parameter was drawn from. Stored on every parameter so a
/// reset can resample from the original distribution.
struct InitSpec {
  InitKind kind = InitKind::constant;
  std::int64_t fan_in = 1;
  double value = 0.0;

  static InitSpec uniform(std::int64_t fan_in) { return {InitKind::uniform_fan_in, fan_in, 0.0}; }
  static InitSpec constant(double v) { return {InitKind::constant, 1, v}; }

  [[nodiscard]] double bound() const { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

  double draw(Rng& rng) const {
    if (kind == InitKind::constant) return value;
    const double b = bound();
    return rng.uniform(-b, b);
  }

  friend bool operator==(const InitSpec&, const InitSpec&) = default;
};

inline Tensor sample_init(const InitSpec& spec, const Shape& shape, Rng& rng) {
  if (spec.kind == InitKind::uniform_fan_in && spec.fan_in < 1) {
    throw Error(ErrorCode::invalid_shape, "fan_in must be positive");
  }
  Tensor t(shape, 0.0);
  for (auto& v : t.data()) v = spec.draw(rng);
  return t;
}

}  // namespace plab

#pragma once

#include <cmath>
#include <cstdint>

#include "plab/net.hpp"

namespace plab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Adam over a model's parameters. First/second moments live on each Param
/// so that a neuron reset can clear exactly the entries it touches.
///
///   m <- b1 m + (1-b1) g
///   v <- b2 v + (1-b2) g^2
///   w <- w - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
///
/// Frozen entries are skipped entirely.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(Model& model) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Param* p : model.params()) {
      double* w = p->value.raw();
      const double* g = p->grad.raw();
      double* m = p->m.raw();
      double* v = p->v.raw();
      const std::uint8_t* frozen = p->frozen.data();
      const std::size_t n = p->value.size();
      for (std::size_t i = 0; i < n; ++i) {
        if (frozen[i]) continue;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        w[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
  }

  [[nodiscard]] std::int64_t steps() const { return t_; }
  [[nodiscard]] const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

/// target <- (1-tau) target + tau online, parameter by parameter.
inline void soft_update(Model& target, const Model& online, double tau) {
  auto dst = target.params();
  auto src = online.params();
  if (dst.size() != src.size()) throw Error(ErrorCode::invalid_arch, "soft_update on mismatched models");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    double* d = dst[k]->value.raw();
    const double* s = src[k]->value.raw();
    for (std::size_t i = 0; i < dst[k]->value.size(); ++i) d[i] = (1.0 - tau) * d[i] + tau * s[i];
  }
}

}  // namespace plab

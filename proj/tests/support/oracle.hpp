#pragma once

// Forward-only reference computations for the test suites. Nothing here
// calls Model::backward.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "plab/net.hpp"
#include "plab/rng.hpp"
#include "plab/tensor.hpp"
#include "plab/zoo.hpp"

namespace oracle {

using plab::Model;
using plab::Tensor;

/// Test loss L(y) = sum_bo c_bo y_bo + 0.5 * sum_bo y_bo^2.
struct QuadLoss {
  Tensor c;

  [[nodiscard]] double value(const Tensor& y) const {
    double s = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) s += c[k] * y[k] + 0.5 * y[k] * y[k];
    return s;
  }
  [[nodiscard]] double value_row(const Tensor& y, std::size_t row_in_c) const {
    double s = 0.0;
    const std::size_t w = y.cols();
    for (std::size_t k = 0; k < w; ++k) s += c[row_in_c * w + k] * y[k] + 0.5 * y[k] * y[k];
    return s;
  }
  [[nodiscard]] Tensor grad(const Tensor& y) const {
    Tensor g = y;
    for (std::size_t k = 0; k < y.size(); ++k) g[k] = c[k] + y[k];
    return g;
  }
};

inline QuadLoss random_loss(std::size_t batch, std::size_t width, plab::Rng& rng) {
  QuadLoss l{Tensor::matrix(static_cast<std::int64_t>(batch), static_cast<std::int64_t>(width))};
  for (auto& v : l.c.data()) v = rng.uniform(-1.0, 1.0);
  return l;
}

inline Tensor random_batch(std::size_t batch, std::size_t width, plab::Rng& rng, double scale = 1.0) {
  Tensor x = Tensor::matrix(static_cast<std::int64_t>(batch), static_cast<std::int64_t>(width));
  for (auto& v : x.data()) v = scale * rng.normal();
  return x;
}

inline Tensor take_row(const Tensor& x, std::size_t r) {
  Tensor out = Tensor::matrix(1, static_cast<std::int64_t>(x.cols()));
  std::copy_n(x.raw() + r * x.cols(), x.cols(), out.raw());
  return out;
}

/// Central difference of the loss w.r.t. every parameter entry, in
/// Model::params() order.
inline std::vector<std::vector<double>> param_gradients(Model& m, const Tensor& x, const QuadLoss& loss,
                                                        double eps = 1e-5) {
  std::vector<std::vector<double>> out;
  for (plab::Param* p : m.params()) {
    std::vector<double> g(p->value.size());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double w0 = p->value[i];
      p->value[i] = w0 + eps;
      const double lp = loss.value(m.forward(x));
      p->value[i] = w0 - eps;
      const double lm = loss.value(m.forward(x));
      p->value[i] = w0;
      g[i] = (lp - lm) / (2.0 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Expected tap gradients: for each site, the batch mean of |dL/dz| obtained
/// by perturbing the pre-activation of that unit on one sample, or of
/// |dL_b/dgain| computed from a single-sample forward for layernorm sites.
inline std::vector<double> tap_gradients(Model& m, const Tensor& x, const QuadLoss& loss, double eps = 1e-5) {
  std::vector<double> out;
  const std::size_t batch = x.rows();
  for (const auto& s : m.sites()) {
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      double d;
      if (s.kind == plab::SiteKind::post_activation) {
        plab::Injection up{s.layer, b, static_cast<std::size_t>(s.unit), eps};
        plab::Injection dn{s.layer, b, static_cast<std::size_t>(s.unit), -eps};
        const double lp = loss.value(m.forward(x, up));
        const double lm = loss.value(m.forward(x, dn));
        d = (lp - lm) / (2.0 * eps);
      } else {
        const Tensor xb = take_row(x, b);
        double& g = m.node(s.layer).gain.value[static_cast<std::size_t>(s.unit)];
        const double g0 = g;
        g = g0 + eps;
        const double lp = loss.value_row(m.forward(xb), b);
        g = g0 - eps;
        const double lm = loss.value_row(m.forward(xb), b);
        g = g0;
        d = (lp - lm) / (2.0 * eps);
      }
      acc += std::abs(d);
    }
    out.push_back(acc / static_cast<double>(batch));
  }
  return out;
}

/// Batch-mean |h| per site straight from forward values.
inline std::vector<double> tap_activations(Model& m, const Tensor& x) {
  m.forward(x);
  std::vector<double> out;
  for (const auto& s : m.sites()) {
    const Tensor& v = m.value(s.layer);
    double acc = 0.0;
    for (std::size_t b = 0; b < v.rows(); ++b) acc += std::abs(v.at(b, static_cast<std::size_t>(s.unit)));
    out.push_back(acc / static_cast<double>(v.rows()));
  }
  return out;
}

inline bool close(double a, double b, double rel = 1e-6, double abs_floor = 1e-9) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

/// Smallest |pre-activation| over all activation nodes for a batch; used to
/// redraw inputs that sit on a ReLU kink.
inline double min_abs_preactivation(Model& m, const Tensor& x) {
  m.forward(x);
  double best = 1e300;
  for (std::size_t id = 0; id < m.nodes().size(); ++id) {
    if (m.nodes()[id].kind != plab::NodeKind::activation) continue;
    for (double z : m.preactivation(static_cast<int>(id)).data()) best = std::min(best, std::abs(z));
  }
  return best;
}

/// A randomized small network, <= 100 parameters.
struct NetCase {
  std::string label;
  Model model;
  Tensor input;
  QuadLoss loss;
};

inline NetCase random_case(int index, plab::Rng& rng) {
  using plab::ActivationKind;
  static constexpr ActivationKind kinds[] = {ActivationKind::relu, ActivationKind::leaky_relu, ActivationKind::sigmoid,
                                             ActivationKind::tanh, ActivationKind::swish};
  const ActivationKind act = kinds[index % 5];
  const int variant = (index / 5) % 4;  // 0 mlp, 1 mlp+ln, 2 bro, 3 concat two-branch
  NetCase c;
  plab::Rng build_rng = rng.split(static_cast<std::uint64_t>(index) + 100);
  const std::size_t in = 3, out = 2;
  if (variant <= 2) {
    plab::ArchSpec spec;
    spec.family = variant == 2 ? plab::Family::bro : plab::Family::mlp;
    spec.input_dim = in;
    spec.output_dim = out;
    spec.hidden = variant == 2 ? 4 : 5;
    spec.depth = variant == 2 ? 1 : 2;
    spec.activation = act;
    spec.layernorm = variant >= 1;
    c.model = plab::build(spec, build_rng);
    c.label = plab::to_string(spec.family) + (spec.layernorm ? "+ln" : "") + "/" + plab::to_string(act);
  } else {
    Model& m = c.model;
    const int x = m.add_input(in);
    const int a = m.add_activation(m.add_linear(x, 4, build_rng), act);
    const int b = m.add_activation(m.add_linear(x, 3, build_rng), act);
    const int cat = m.add_concat(a, b);
    const int h = m.add_activation(m.add_linear(cat, 4, build_rng), act);
    m.add_linear(m.add_residual(h, a), out, build_rng);
    c.label = "concat+residual/" + plab::to_string(act);
  }
  // Perturb parameters away from their init so layernorm gains/shifts and
  // biases are generic.
  for (plab::Param* p : c.model.params())
    for (auto& v : p->value.data()) v += 0.3 * rng.uniform(-1.0, 1.0);
  const std::size_t batch = 3;
  do {
    c.input = random_batch(batch, in, rng);
  } while (min_abs_preactivation(c.model, c.input) < 1e-3);
  c.loss = random_loss(batch, out, rng);
  return c;
}

}  // namespace oracle

#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "plab/error.hpp"
#include "plab/init.hpp"
#include "plab/rng.hpp"
#include "plab/tensor.hpp"

namespace plab {

enum class ActivationKind { relu, leaky_relu, sigmoid, tanh, swish };
enum class NodeKind { input, linear, activation, layernorm, residual_add, concat };
enum class SiteKind { post_activation, layernorm_feature };

inline std::string to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: return "leaky_relu";
    case ActivationKind::sigmoid: return "sigmoid";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::swish: return "swish";
  }
  return "?";
}

inline std::optional<ActivationKind> parse_activation(const std::string& s) {
  if (s == "relu") return ActivationKind::relu;
  if (s == "leaky_relu" || s == "leaky-relu") return ActivationKind::leaky_relu;
  if (s == "sigmoid") return ActivationKind::sigmoid;
  if (s == "tanh") return ActivationKind::tanh;
  if (s == "swish") return ActivationKind::swish;
  return std::nullopt;
}

inline std::string to_string(SiteKind k) {
  return k == SiteKind::post_activation ? "post_activation" : "layernorm_feature";
}

/// Identity of an instrumented neuron: the node that owns it, the unit
/// index inside that node, and what is measured there.
struct NeuronSite {
  int layer = 0;
  int unit = 0;
  SiteKind kind = SiteKind::post_activation;

  friend auto operator<=>(const NeuronSite&, const NeuronSite&) = default;
};

inline std::string to_string(const NeuronSite& s) {
  return "(" + std::to_string(s.layer) + "," + std::to_string(s.unit) + "," + to_string(s.kind) + ")";
}

/// Batch means of |h| and |dL/dz| (or |dL/dgain| for layernorm features).
struct TapRecord {
  NeuronSite site;
  double activation = 0.0;
  double gradient = 0.0;
};

/// A trainable tensor together with its gradient, Adam moments, per-entry
/// freeze mask and the distribution it was drawn from.
struct Param {
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;
  std::vector<std::uint8_t> frozen;
  InitSpec init;

  Param() = default;
  Param(Tensor initial, InitSpec spec)
      : value(std::move(initial)),
        grad(value.shape(), 0.0),
        m(value.shape(), 0.0),
        v(value.shape(), 0.0),
        frozen(value.size(), 0),
        init(spec) {}

  [[nodiscard]] bool defined() const { return !value.empty(); }

  void clear_moments(std::size_t i) {
    m[i] = 0.0;
    v[i] = 0.0;
  }
};

struct Node {
  NodeKind kind = NodeKind::input;
  std::vector<int> inputs;
  std::size_t width = 0;

  Param weight;  // linear: [width, fan_in]
  Param bias;    // linear: [width]
  Param gain;    // layernorm: [width]
  Param shift;   // layernorm: [width]
  double ln_eps = 1e-5;

  ActivationKind activation = ActivationKind::relu;
  double slope = 0.01;
  std::vector<std::uint8_t> pruned;  // activation: units forced to zero
};

/// Perturbs the pre-activation of one unit for one sample during forward.
/// Used by finite-difference oracles ("injected bias at the site").
struct Injection {
  int node = -1;
  std::size_t sample = 0;
  std::size_t unit = 0;
  double delta = 0.0;
};

namespace testing {
/// Fault switches for mutation testing of the verification battery.
struct Faults {
  bool relu_backward_sign = false;
};
inline Faults& faults() {
  static thread_local Faults f;
  return f;
}
}  // namespace testing

namespace detail {

inline double activate(ActivationKind k, double slope, double z) {
  switch (k) {
    case ActivationKind::relu: return z > 0.0 ? z : 0.0;
    case ActivationKind::leaky_relu: return z > 0.0 ? z : slope * z;
    case ActivationKind::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case ActivationKind::tanh: return std::tanh(z);
    case ActivationKind::swish: return z / (1.0 + std::exp(-z));
  }
  return z;
}

// dh/dz given pre-activation z and post-activation h.
inline double activate_grad(ActivationKind k, double slope, double z, double h) {
  switch (k) {
    case ActivationKind::relu: return z > 0.0 ? 1.0 : 0.0;
    case ActivationKind::leaky_relu: return z > 0.0 ? 1.0 : slope;
    case ActivationKind::sigmoid: return h * (1.0 - h);
    case ActivationKind::tanh: return 1.0 - h * h;
    case ActivationKind::swish: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s + z * s * (1.0 - s);
    }
  }
  return 1.0;
}

inline void ensure_shape(Tensor& t, std::size_t rows, std::size_t cols) {
  if (t.rank() == 2 && t.rows() == rows && t.cols() == cols) return;
  t.resize_matrix(rows, cols);
}

}  // namespace detail

/// Feed-forward DAG with a single input node (index 0). Nodes are stored in
/// construction order, which is a topological order because every node may
/// only read nodes created before it.
class Model {
 public:
  Model() = default;

  int add_input(std::size_t width) {
    if (!nodes_.empty()) throw Error(ErrorCode::invalid_arch, "model already has an input");
    if (width == 0) throw Error(ErrorCode::invalid_arch, "input width must be positive");
    Node n;
    n.kind = NodeKind::input;
    n.width = width;
    return push(std::move(n));
  }

  int add_linear(int in, std::size_t out, Rng& rng) {
    const auto fan_in = static_cast<std::int64_t>(node(in).width);
    return add_linear(in, out, InitSpec::uniform(fan_in), InitSpec::uniform(fan_in), rng);
  }

  int add_linear(int in, std::size_t out, const InitSpec& w_init, const InitSpec& b_init, Rng& rng) {
    check_input(in);
    if (out == 0) throw Error(ErrorCode::invalid_arch, "linear width must be positive");
    Node n;
    n.kind = NodeKind::linear;
    n.inputs = {in};
    n.width = out;
    const auto rows = static_cast<std::int64_t>(out);
    const auto cols = static_cast<std::int64_t>(node(in).width);
    n.weight = Param(sample_init(w_init, {rows, cols}, rng), w_init);
    n.bias = Param(sample_init(b_init, {rows}, rng), b_init);
    return push(std::move(n));
  }

  int add_activation(int in, ActivationKind kind, double slope = 0.01) {
    check_input(in);
    Node n;
    n.kind = NodeKind::activation;
    n.inputs = {in};
    n.width = node(in).width;
    n.activation = kind;
    n.slope = slope;
    n.pruned.assign(n.width, 0);
    return push(std::move(n));
  }

  int add_layernorm(int in, double eps = 1e-5) {
    check_input(in);
    Node n;
    n.kind = NodeKind::layernorm;
    n.inputs = {in};
    n.width = node(in).width;
    n.ln_eps = eps;
    const auto w = static_cast<std::int64_t>(n.width);
    n.gain = Param(Tensor({w}, 1.0), InitSpec::constant(1.0));
    n.shift = Param(Tensor({w}, 0.0), InitSpec::constant(0.0));
    return push(std::move(n));
  }

  int add_residual(int a, int b) {
    check_input(a);
    check_input(b);
    if (node(a).width != node(b).width) {
      throw Error(ErrorCode::invalid_shape, "residual-add inputs differ in width");
    }
    Node n;
    n.kind = NodeKind::residual_add;
    n.inputs = {a, b};
    n.width = node(a).width;
    return push(std::move(n));
  }

  int add_concat(int a, int b) {
    check_input(a);
    check_input(b);
    Node n;
    n.kind = NodeKind::concat;
    n.inputs = {a, b};
    n.width = node(a).width + node(b).width;
    return push(std::move(n));
  }

  void set_output(int id) {
    check_input(id);
    output_ = id;
  }

  [[nodiscard]] int output_node() const { return output_ >= 0 ? output_ : static_cast<int>(nodes_.size()) - 1; }
  [[nodiscard]] std::size_t input_width() const { return nodes_.empty() ? 0 : nodes_[0].width; }
  [[nodiscard]] std::size_t output_width() const { return nodes_.empty() ? 0 : nodes_[output_node()].width; }
  [[nodiscard]] bool empty() const { return nodes_.empty(); }

  [[nodiscard]] const std::vector<Node>& nodes() const { return nodes_; }
  [[nodiscard]] std::vector<Node>& nodes() { return nodes_; }
  [[nodiscard]] const Node& node(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw Error(ErrorCode::not_found, "node " + std::to_string(id));
    }
    return nodes_[static_cast<std::size_t>(id)];
  }
  [[nodiscard]] Node& node(int id) {
    return const_cast<Node&>(static_cast<const Model&>(*this).node(id));
  }

  /// Trainable parameters in a fixed order (node order; weight, bias, gain, shift).
  [[nodiscard]] std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& n : nodes_) {
      for (Param* p : {&n.weight, &n.bias, &n.gain, &n.shift})
        if (p->defined()) out.push_back(p);
    }
    return out;
  }
  [[nodiscard]] std::vector<const Param*> params() const {
    std::vector<const Param*> out;
    for (const auto& n : nodes_) {
      for (const Param* p : {&n.weight, &n.bias, &n.gain, &n.shift})
        if (p->defined()) out.push_back(p);
    }
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const Param* p : params()) total += p->value.size();
    return total;
  }

  /// Instrumented sites in deterministic order: nodes ascending, units
  /// ascending within a node.
  [[nodiscard]] std::vector<NeuronSite> sites() const {
    std::vector<NeuronSite> out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      SiteKind kind;
      if (n.kind == NodeKind::activation) {
        kind = SiteKind::post_activation;
      } else if (n.kind == NodeKind::layernorm) {
        kind = SiteKind::layernorm_feature;
      } else {
        continue;
      }
      for (std::size_t u = 0; u < n.width; ++u) out.push_back({static_cast<int>(id), static_cast<int>(u), kind});
    }
    return out;
  }

  [[nodiscard]] bool has_site(const NeuronSite& s) const {
    if (s.layer < 0 || static_cast<std::size_t>(s.layer) >= nodes_.size() || s.unit < 0) return false;
    const Node& n = nodes_[static_cast<std::size_t>(s.layer)];
    if (static_cast<std::size_t>(s.unit) >= n.width) return false;
    return (s.kind == SiteKind::post_activation && n.kind == NodeKind::activation) ||
           (s.kind == SiteKind::layernorm_feature && n.kind == NodeKind::layernorm);
  }

  const Tensor& forward(const Tensor& input, const std::optional<Injection>& inject = std::nullopt) {
    if (nodes_.empty()) throw Error(ErrorCode::invalid_arch, "empty model");
    if (input.rank() != 2 || input.cols() != nodes_[0].width) {
      throw Error(ErrorCode::invalid_shape, "input " + shape_string(input.shape()) + " for model input width " +
                                                std::to_string(nodes_[0].width));
    }
    const std::size_t batch = input.rows();
    const std::size_t count = nodes_.size();
    values_.resize(count);
    preact_.resize(count);
    ln_rstd_.resize(count);
    values_[0] = input;

    for (std::size_t id = 1; id < count; ++id) {
      Node& n = nodes_[id];
      Tensor& out = values_[id];
      detail::ensure_shape(out, batch, n.width);
      switch (n.kind) {
        case NodeKind::input: break;
        case NodeKind::linear: {
          const Tensor& x = values_[static_cast<std::size_t>(n.inputs[0])];
          auto y = detail::as_matrix(out);
          y.noalias() = detail::as_matrix(x) * detail::as_matrix(n.weight.value).transpose();
          const double* b = n.bias.value.raw();
          for (std::size_t r = 0; r < batch; ++r) {
            double* row = out.raw() + r * n.width;
            for (std::size_t c = 0; c < n.width; ++c) row[c] += b[c];
          }
          break;
        }
        case NodeKind::activation: {
          Tensor& z = preact_[id];
          z = values_[static_cast<std::size_t>(n.inputs[0])];
          if (inject && inject->node == static_cast<int>(id)) {
            z.at(inject->sample, inject->unit) += inject->delta;
          }
          const double* zp = z.raw();
          double* hp = out.raw();
          const std::size_t total = batch * n.width;
          if (n.activation == ActivationKind::relu) {
            for (std::size_t k = 0; k < total; ++k) hp[k] = zp[k] > 0.0 ? zp[k] : 0.0;
          } else {
            for (std::size_t k = 0; k < total; ++k) hp[k] = detail::activate(n.activation, n.slope, zp[k]);
          }
          if (std::find(n.pruned.begin(), n.pruned.end(), 1) != n.pruned.end()) {
            for (std::size_t r = 0; r < batch; ++r)
              for (std::size_t c = 0; c < n.width; ++c)
                if (n.pruned[c]) hp[r * n.width + c] = 0.0;
          }
          break;
        }
        case NodeKind::layernorm: {
          const Tensor& x = values_[static_cast<std::size_t>(n.inputs[0])];
          Tensor& xhat = preact_[id];
          detail::ensure_shape(xhat, batch, n.width);
          Tensor& rstd = ln_rstd_[id];
          if (rstd.size() != batch) rstd = Tensor({static_cast<std::int64_t>(batch)}, 0.0);
          const double inv_w = 1.0 / static_cast<double>(n.width);
          for (std::size_t r = 0; r < batch; ++r) {
            const double* xr = x.raw() + r * n.width;
            double mean = 0.0;
            for (std::size_t c = 0; c < n.width; ++c) mean += xr[c];
            mean *= inv_w;
            double var = 0.0;
            for (std::size_t c = 0; c < n.width; ++c) var += (xr[c] - mean) * (xr[c] - mean);
            var *= inv_w;
            const double rs = 1.0 / std::sqrt(var + n.ln_eps);
            rstd[r] = rs;
            double* xh = xhat.raw() + r * n.width;
            double* yr = out.raw() + r * n.width;
            for (std::size_t c = 0; c < n.width; ++c) {
              xh[c] = (xr[c] - mean) * rs;
              yr[c] = n.gain.value[c] * xh[c] + n.shift.value[c];
            }
          }
          break;
        }
        case NodeKind::residual_add: {
          const Tensor& a = values_[static_cast<std::size_t>(n.inputs[0])];
          const Tensor& b = values_[static_cast<std::size_t>(n.inputs[1])];
          for (std::size_t k = 0; k < out.size(); ++k) out[k] = a[k] + b[k];
          break;
        }
        case NodeKind::concat: {
          const Tensor& a = values_[static_cast<std::size_t>(n.inputs[0])];
          const Tensor& b = values_[static_cast<std::size_t>(n.inputs[1])];
          const std::size_t wa = a.cols(), wb = b.cols();
          for (std::size_t r = 0; r < batch; ++r) {
            std::copy_n(a.raw() + r * wa, wa, out.raw() + r * n.width);
            std::copy_n(b.raw() + r * wb, wb, out.raw() + r * n.width + wa);
          }
          break;
        }
      }
    }
    const Tensor& y = values_[static_cast<std::size_t>(output_node())];
    if (!y.all_finite()) throw Error(ErrorCode::numeric_overflow, "non-finite model output");
    forward_ready_ = true;
    return y;
  }

  /// Reverse-mode pass for the most recent forward. `output_grad` is dL/dy
  /// per sample. Parameter gradients are overwritten (not accumulated); the
  /// returned taps follow sites() order.
  std::vector<TapRecord> backward(const Tensor& output_grad) {
    if (!forward_ready_) throw Error(ErrorCode::state, "backward without a matching forward");
    const std::size_t count = nodes_.size();
    const std::size_t out_id = static_cast<std::size_t>(output_node());
    const Tensor& y = values_[out_id];
    if (output_grad.shape() != y.shape()) {
      throw Error(ErrorCode::invalid_shape, "output gradient " + shape_string(output_grad.shape()) +
                                                " vs output " + shape_string(y.shape()));
    }
    const std::size_t batch = y.rows();
    const double inv_b = 1.0 / static_cast<double>(batch);
    grads_.resize(count);
    for (std::size_t id = 0; id < count; ++id) detail::ensure_shape(grads_[id], batch, nodes_[id].width);
    grads_[out_id] = output_grad;
    // A node's gradient buffer is assigned by its first consumer and
    // accumulated by the rest; `claim` reports which case applies.
    grad_live_.assign(count, 0);
    grad_live_[out_id] = 1;
    auto claim = [&](std::size_t in) {
      const bool fresh = grad_live_[in] == 0;
      grad_live_[in] = 1;
      return fresh;
    };

    // Taps are emitted in ascending node order; collect per node, then join.
    site_taps_.resize(count);
    std::size_t total_sites = 0;
    for (std::size_t id = 0; id < count; ++id) {
      const NodeKind k = nodes_[id].kind;
      const bool has = k == NodeKind::activation || k == NodeKind::layernorm;
      site_taps_[id].resize(has ? nodes_[id].width : 0);
      total_sites += site_taps_[id].size();
    }

    for (std::size_t id = count; id-- > 1;) {
      Node& n = nodes_[id];
      if (!grad_live_[id]) {
        grads_[id].fill(0.0);
        grad_live_[id] = 1;
      }
      const Tensor& g = grads_[id];
      switch (n.kind) {
        case NodeKind::input: break;
        case NodeKind::linear: {
          const auto in = static_cast<std::size_t>(n.inputs[0]);
          const auto gm = detail::as_matrix(g);
          detail::as_matrix(n.weight.grad).noalias() = gm.transpose() * detail::as_matrix(values_[in]);
          for (std::size_t c = 0; c < n.width; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < batch; ++r) s += g.raw()[r * n.width + c];
            n.bias.grad[c] = s;
          }
          if (in != 0 || want_input_grad_) {
            if (claim(in)) {
              detail::as_matrix(grads_[in]).noalias() = gm * detail::as_matrix(n.weight.value);
            } else {
              detail::as_matrix(grads_[in]).noalias() += gm * detail::as_matrix(n.weight.value);
            }
          }
          break;
        }
        case NodeKind::activation: {
          const auto in = static_cast<std::size_t>(n.inputs[0]);
          const Tensor& z = preact_[id];
          const Tensor& h = values_[id];
          Tensor& gin = grads_[in];
          const bool fresh = claim(in);
          act_sum_.assign(n.width, 0.0);
          grad_sum_.assign(n.width, 0.0);
          const bool relu = n.activation == ActivationKind::relu;
          const double sign = testing::faults().relu_backward_sign && relu ? -1.0 : 1.0;
          for (std::size_t r = 0; r < batch; ++r) {
            const double* gr = g.raw() + r * n.width;
            const double* zr = z.raw() + r * n.width;
            const double* hr = h.raw() + r * n.width;
            double* gi = gin.raw() + r * n.width;
            for (std::size_t c = 0; c < n.width; ++c) {
              double dz = 0.0;
              if (!n.pruned[c]) {
                dz = relu ? (zr[c] > 0.0 ? gr[c] : 0.0)
                          : gr[c] * detail::activate_grad(n.activation, n.slope, zr[c], hr[c]);
                dz *= sign;
              }
              gi[c] = fresh ? dz : gi[c] + dz;
              act_sum_[c] += std::abs(hr[c]);
              grad_sum_[c] += std::abs(dz);
            }
          }
          for (std::size_t c = 0; c < n.width; ++c) {
            site_taps_[id][c] = {{static_cast<int>(id), static_cast<int>(c), SiteKind::post_activation},
                                 act_sum_[c] * inv_b,
                                 grad_sum_[c] * inv_b};
          }
          break;
        }
        case NodeKind::layernorm: {
          const auto in = static_cast<std::size_t>(n.inputs[0]);
          const Tensor& xhat = preact_[id];
          const Tensor& yv = values_[id];
          Tensor& gin = grads_[in];
          const bool fresh = claim(in);
          act_sum_.assign(n.width, 0.0);
          grad_sum_.assign(n.width, 0.0);
          auto& act_sum = act_sum_;
          auto& gain_abs = grad_sum_;
          n.gain.grad.fill(0.0);
          n.shift.grad.fill(0.0);
          const double inv_w = 1.0 / static_cast<double>(n.width);
          dxhat_.resize(n.width);
          auto& dxhat = dxhat_;
          for (std::size_t r = 0; r < batch; ++r) {
            const double* gr = g.raw() + r * n.width;
            const double* xh = xhat.raw() + r * n.width;
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t c = 0; c < n.width; ++c) {
              const double dg = gr[c] * xh[c];
              n.gain.grad[c] += dg;
              n.shift.grad[c] += gr[c];
              gain_abs[c] += std::abs(dg);
              act_sum[c] += std::abs(yv.raw()[r * n.width + c]);
              dxhat[c] = gr[c] * n.gain.value[c];
              mean_d += dxhat[c];
              mean_dx += dxhat[c] * xh[c];
            }
            mean_d *= inv_w;
            mean_dx *= inv_w;
            const double rs = ln_rstd_[id][r];
            double* gi = gin.raw() + r * n.width;
            for (std::size_t c = 0; c < n.width; ++c) {
              const double d = rs * (dxhat[c] - mean_d - xh[c] * mean_dx);
              gi[c] = fresh ? d : gi[c] + d;
            }
          }
          for (std::size_t c = 0; c < n.width; ++c) {
            site_taps_[id][c] = {{static_cast<int>(id), static_cast<int>(c), SiteKind::layernorm_feature},
                       act_sum[c] * inv_b,
                       gain_abs[c] * inv_b};
          }
          break;
        }
        case NodeKind::residual_add: {
          for (int in : n.inputs) {
            Tensor& gin = grads_[static_cast<std::size_t>(in)];
            if (claim(static_cast<std::size_t>(in))) {
              std::copy_n(g.raw(), g.size(), gin.raw());
            } else {
              for (std::size_t k = 0; k < g.size(); ++k) gin[k] += g[k];
            }
          }
          break;
        }
        case NodeKind::concat: {
          Tensor& ga = grads_[static_cast<std::size_t>(n.inputs[0])];
          Tensor& gb = grads_[static_cast<std::size_t>(n.inputs[1])];
          if (claim(static_cast<std::size_t>(n.inputs[0]))) ga.fill(0.0);
          if (claim(static_cast<std::size_t>(n.inputs[1]))) gb.fill(0.0);
          const std::size_t wa = ga.cols(), wb = gb.cols();
          for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t c = 0; c < wa; ++c) ga.raw()[r * wa + c] += g.raw()[r * n.width + c];
            for (std::size_t c = 0; c < wb; ++c) gb.raw()[r * wb + c] += g.raw()[r * n.width + wa + c];
          }
          break;
        }
      }
    }
    if (!grad_live_[0]) grads_[0].fill(0.0);
    forward_ready_ = false;
    std::vector<TapRecord> taps;
    taps.reserve(total_sites);
    for (const auto& recs : site_taps_) taps.insert(taps.end(), recs.begin(), recs.end());
    return taps;
  }

  /// dL/dinput of the last backward. Computed only when enabled (critics
  /// need it for the policy gradient; most callers do not).
  [[nodiscard]] const Tensor& input_grad() const { return grads_.at(0); }
  void set_want_input_grad(bool on) { want_input_grad_ = on; }

  /// Value of a node from the last forward.
  [[nodiscard]] const Tensor& value(int id) const { return values_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] const Tensor& preactivation(int id) const { return preact_.at(static_cast<std::size_t>(id)); }

 private:
  int push(Node n) {
    nodes_.push_back(std::move(n));
    forward_ready_ = false;
    return static_cast<int>(nodes_.size()) - 1;
  }

  void check_input(int in) const {
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size()) {
      throw Error(ErrorCode::invalid_arch, "node reads undefined node " + std::to_string(in));
    }
  }

  std::vector<Node> nodes_;
  int output_ = -1;
  bool forward_ready_ = false;
  bool want_input_grad_ = true;

  std::vector<Tensor> values_;
  std::vector<Tensor> preact_;  // activation: pre-activation z; layernorm: xhat
  std::vector<Tensor> ln_rstd_;
  std::vector<Tensor> grads_;
  std::vector<std::uint8_t> grad_live_;
  std::vector<std::vector<TapRecord>> site_taps_;
  std::vector<double> act_sum_, grad_sum_, dxhat_;
};

inline std::vector<NeuronSite> list_sites(const Model& model) { return model.sites(); }

}  // namespace plab

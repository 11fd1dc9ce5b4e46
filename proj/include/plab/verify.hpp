#pragma once

// Invariant battery behind `plab verify`.

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "plab/metrics.hpp"
#include "plab/net.hpp"
#include "plab/reset.hpp"
#include "plab/zoo.hpp"

namespace plab::verify {

enum class Status { pass, fail, skip };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::pass: return "PASS";
    case Status::fail: return "FAIL";
    case Status::skip: return "SKIPPED";
  }
  return "?";
}

struct Result {
  std::string name;
  Status status = Status::pass;
  std::string detail;  // counterexample on failure, reason when skipped
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline bool close(double a, double b, double rel = 1e-6, double floor = 1e-9) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + floor;
}

inline Tensor normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = Tensor::matrix(static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols));
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

// L = sum c*y + 0.5*y^2, scaled by `scale`.
struct Loss {
  Tensor c;
  double scale = 1.0;
  [[nodiscard]] double value(const Tensor& y, std::size_t row_offset = 0) const {
    double s = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) s += c[row_offset * y.cols() + k] * y[k] + 0.5 * y[k] * y[k];
    return scale * s;
  }
  [[nodiscard]] Tensor grad(const Tensor& y) const {
    Tensor g = y;
    for (std::size_t k = 0; k < y.size(); ++k) g[k] = scale * (c[k] + y[k]);
    return g;
  }
};

struct Case {
  std::string label;
  Model model;
  Tensor x;
  Loss loss;
};

inline double min_abs_preactivation(Model& m, const Tensor& x) {
  m.forward(x);
  double best = 1e300;
  for (std::size_t id = 0; id < m.nodes().size(); ++id)
    if (m.nodes()[id].kind == NodeKind::activation)
      for (double z : m.preactivation(static_cast<int>(id)).data()) best = std::min(best, std::abs(z));
  return best;
}

/// Small randomized net: every activation kind, with and without layernorm,
/// a BroNet block, and a concat + residual graph. At most 100 parameters.
inline Case make_case(int index, Rng& rng) {
  static constexpr ActivationKind kinds[] = {ActivationKind::relu, ActivationKind::leaky_relu, ActivationKind::sigmoid,
                                             ActivationKind::tanh, ActivationKind::swish};
  const ActivationKind act = kinds[index % 5];
  const int variant = (index / 5) % 4;
  Case c;
  Rng br = rng.split(static_cast<std::uint64_t>(index) + 1000);
  if (variant <= 2) {
    ArchSpec spec;
    spec.family = variant == 2 ? Family::bro : Family::mlp;
    spec.input_dim = 3;
    spec.output_dim = 2;
    spec.hidden = variant == 2 ? 4 : 5;
    spec.depth = variant == 2 ? 1 : 2;
    spec.activation = act;
    spec.layernorm = variant >= 1;
    c.model = build(spec, br);
    c.label = to_string(spec.family) + (spec.layernorm ? "+ln" : "") + "/" + to_string(act);
  } else {
    Model& m = c.model;
    const int x = m.add_input(3);
    const int a = m.add_activation(m.add_linear(x, 4, br), act);
    const int b = m.add_activation(m.add_linear(x, 3, br), act);
    const int h = m.add_activation(m.add_linear(m.add_concat(a, b), 4, br), act);
    m.add_linear(m.add_residual(h, a), 2, br);
    c.label = "concat+residual/" + to_string(act);
  }
  for (Param* p : c.model.params())
    for (auto& v : p->value.data()) v += 0.3 * rng.uniform(-1.0, 1.0);
  do {
    c.x = normal_matrix(3, 3, rng);
  } while (min_abs_preactivation(c.model, c.x) < 1e-3);
  c.loss.c = normal_matrix(3, 2, rng);
  return c;
}

inline Model relu_mlp(Rng& rng, ActivationKind act = ActivationKind::relu) {
  ArchSpec spec;
  spec.input_dim = 4;
  spec.output_dim = 3;
  spec.hidden = 6;
  spec.depth = 3;
  spec.activation = act;
  Model m = build(spec, rng);
  for (auto& n : m.nodes())
    if (n.kind == NodeKind::linear)
      for (auto& b : n.bias.value.data()) b -= 0.4;
  return m;
}

inline std::vector<LayerScores> scores_for(Model& m, const std::vector<Tensor>& xs, const std::vector<Loss>& losses) {
  ActivityAccumulator acc(m.sites());
  for (std::size_t k = 0; k < xs.size(); ++k) acc.accumulate(m.backward(losses[k].grad(m.forward(xs[k]))));
  return compute_scores(acc);
}

// "node 3 weight[2,1] (feeds site (4,2,post_activation))" for entry k of p.
inline std::string describe_entry(Model& m, const Param* p, std::size_t k) {
  for (std::size_t id = 0; id < m.nodes().size(); ++id) {
    Node& n = m.node(static_cast<int>(id));
    const char* name = p == &n.weight ? "weight" : p == &n.bias ? "bias" : p == &n.gain ? "gain" : p == &n.shift ? "shift" : nullptr;
    if (!name) continue;
    std::string out = "node " + std::to_string(id) + " " + name;
    std::size_t unit = k;
    if (p == &n.weight) {
      unit = k / n.weight.value.cols();
      out += "[" + std::to_string(unit) + "," + std::to_string(k % n.weight.value.cols()) + "]";
    } else {
      out += "[" + std::to_string(k) + "]";
    }
    if (n.kind == NodeKind::layernorm)
      return out + " (site " + to_string(NeuronSite{static_cast<int>(id), static_cast<int>(unit), SiteKind::layernorm_feature}) + ")";
    for (std::size_t a = id + 1; a < m.nodes().size(); ++a)
      if (m.nodes()[a].kind == NodeKind::activation && plab::detail::owning_linear(m, static_cast<int>(a)) == static_cast<int>(id))
        return out + " (feeds site " +
               to_string(NeuronSite{static_cast<int>(a), static_cast<int>(unit), SiteKind::post_activation}) + ")";
    return out;
  }
  return "unknown parameter";
}

}  // namespace detail

inline Result finite_differences(int cases = 20) {
  Result r{"finite-differences", Status::pass, {}};
  Rng rng(101);
  const double eps = 1e-5;
  for (int i = 0; i < cases; ++i) {
    detail::Case c = detail::make_case(i, rng);
    Model& m = c.model;
    const auto taps = m.backward(c.loss.grad(m.forward(c.x)));
    std::vector<std::vector<double>> analytic;
    for (Param* p : m.params()) analytic.emplace_back(p->grad.data().begin(), p->grad.data().end());

    auto params = m.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (std::size_t k = 0; k < params[p]->value.size(); ++k) {
        double& w = params[p]->value[k];
        const double w0 = w;
        w = w0 + eps;
        const double lp = c.loss.value(m.forward(c.x));
        w = w0 - eps;
        const double lm = c.loss.value(m.forward(c.x));
        w = w0;
        const double fd = (lp - lm) / (2 * eps);
        if (!detail::close(analytic[p][k], fd)) {
          r.status = Status::fail;
          r.detail = c.label + ": " + detail::describe_entry(m, params[p], k) + " reverse-mode " +
                     detail::num(analytic[p][k]) + " vs finite difference " + detail::num(fd);
          return r;
        }
      }
    }
    const auto sites = m.sites();
    for (std::size_t s = 0; s < sites.size(); ++s) {
      const NeuronSite& site = sites[s];
      double acc = 0.0;
      for (std::size_t b = 0; b < c.x.rows(); ++b) {
        double d;
        if (site.kind == SiteKind::post_activation) {
          const auto unit = static_cast<std::size_t>(site.unit);
          const double lp = c.loss.value(m.forward(c.x, Injection{site.layer, b, unit, eps}));
          const double lm = c.loss.value(m.forward(c.x, Injection{site.layer, b, unit, -eps}));
          d = (lp - lm) / (2 * eps);
        } else {
          Tensor xb = Tensor::matrix(1, static_cast<std::int64_t>(c.x.cols()));
          std::copy_n(c.x.raw() + b * c.x.cols(), c.x.cols(), xb.raw());
          double& g = m.node(site.layer).gain.value[static_cast<std::size_t>(site.unit)];
          const double g0 = g;
          g = g0 + eps;
          const double lp = c.loss.value(m.forward(xb), b);
          g = g0 - eps;
          const double lm = c.loss.value(m.forward(xb), b);
          g = g0;
          d = (lp - lm) / (2 * eps);
        }
        acc += std::abs(d);
      }
      const double fd = acc / static_cast<double>(c.x.rows());
      if (!detail::close(taps[s].gradient, fd)) {
        r.status = Status::fail;
        r.detail = c.label + ": site " + to_string(site) + " tap gradient " + detail::num(taps[s].gradient) +
                   " vs finite difference " + detail::num(fd);
        return r;
      }
    }
  }
  r.detail = std::to_string(cases) + " nets";
  return r;
}

/// Zero mean |activation| implies zero tap gradient, and the redo set at
/// tau = 0 is contained in the grama set. Scoped to ReLU serial MLPs.
inline Result dormant_zero_gradient(ActivationKind act = ActivationKind::relu, int trials = 50) {
  Result r{"dormant-zero-gradient[" + to_string(act) + "]", Status::pass, {}};
  if (act != ActivationKind::relu) {
    r.status = Status::skip;
    r.detail = "property holds for ReLU serial MLPs only";
    return r;
  }
  Rng rng(202);
  for (int t = 0; t < trials; ++t) {
    Rng br = rng.split(static_cast<std::uint64_t>(t));
    Model m = detail::relu_mlp(br, act);
    const Tensor x = detail::normal_matrix(5, 4, rng);
    const detail::Loss loss{detail::normal_matrix(5, 3, rng)};
    const auto taps = m.backward(loss.grad(m.forward(x)));
    for (const auto& tap : taps) {
      if (tap.activation == 0.0 && tap.gradient != 0.0) {
        r.status = Status::fail;
        r.detail = "trial " + std::to_string(t) + ": site " + to_string(tap.site) + " has zero activation but gradient " +
                   detail::num(tap.gradient);
        return r;
      }
    }
    ActivityAccumulator acc(m.sites());
    acc.accumulate(taps);
    const auto scores = compute_scores(acc);
    const auto redo = classify(scores, 0.0, Metric::redo);
    const auto grama = classify(scores, 0.0, Metric::grama);
    for (const auto& s : redo.sites) {
      if (std::find(grama.sites.begin(), grama.sites.end(), s) == grama.sites.end()) {
        r.status = Status::fail;
        r.detail = "trial " + std::to_string(t) + ": site " + to_string(s) + " is redo-dormant but not grama-inactive";
        return r;
      }
    }
  }
  r.detail = std::to_string(trials) + " (net, batch) pairs";
  return r;
}

inline Result score_normalization(int cases = 20) {
  Result r{"score-normalization", Status::pass, {}};
  Rng rng(303);
  for (int i = 0; i < cases; ++i) {
    detail::Case c = detail::make_case(i, rng);
    const auto scores = detail::scores_for(c.model, {c.x}, {c.loss});
    for (const auto& ls : scores) {
      auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
      };
      if (ls.mean_activation > 0.0 && std::abs(mean(ls.S) - 1.0) > 1e-9) {
        r.status = Status::fail;
        r.detail = c.label + ": layer " + std::to_string(ls.layer) + " mean S = " + detail::num(mean(ls.S));
        return r;
      }
      if (ls.mean_gradient > 0.0 && std::abs(mean(ls.G) - 1.0) > 1e-9) {
        r.status = Status::fail;
        r.detail = c.label + ": layer " + std::to_string(ls.layer) + " mean G = " + detail::num(mean(ls.G));
        return r;
      }
    }
  }
  r.detail = std::to_string(cases) + " nets";
  return r;
}

inline Result gradient_scale_invariance(int cases = 20) {
  Result r{"gradient-scale-invariance", Status::pass, {}};
  Rng rng(404);
  for (int i = 0; i < cases; ++i) {
    detail::Case c = detail::make_case(i, rng);
    detail::Loss base = c.loss;
    const auto ref = detail::scores_for(c.model, {c.x}, {base});
    for (double scale : {1e-3, 1e3}) {
      detail::Loss l = base;
      l.scale = scale;
      const auto got = detail::scores_for(c.model, {c.x}, {l});
      for (std::size_t L = 0; L < ref.size(); ++L)
        for (std::size_t k = 0; k < ref[L].G.size(); ++k)
          if (std::abs(got[L].G[k] - ref[L].G[k]) > 1e-9) {
            r.status = Status::fail;
            r.detail = c.label + ": site " + to_string(ref[L].site(k)) + " G " + detail::num(ref[L].G[k]) +
                       " becomes " + detail::num(got[L].G[k]) + " at loss scale " + detail::num(scale);
            return r;
          }
    }
  }
  r.detail = std::to_string(cases) + " nets, scales {1e-3, 1, 1e3}";
  return r;
}

/// On plain MLPs a reset gives exactly the output of the old network with
/// that unit's outgoing weights zeroed; for dormant units that is the
/// unchanged output.
inline Result function_preservation(int trials = 20) {
  Result r{"function-preservation", Status::pass, {}};
  Rng rng(505);
  for (int t = 0; t < trials; ++t) {
    Rng br = rng.split(static_cast<std::uint64_t>(t));
    Model m = detail::relu_mlp(br);
    const Tensor x = detail::normal_matrix(6, 4, rng);
    const auto sites = m.sites();
    const NeuronSite site = sites[rng.below(sites.size())];

    Model ablated = m;
    for (Node& n : ablated.nodes()) {
      if (n.kind != NodeKind::linear || n.inputs[0] != site.layer) continue;
      const std::size_t fan_in = n.weight.value.cols();
      for (std::size_t row = 0; row < n.width; ++row) n.weight.value[row * fan_in + static_cast<std::size_t>(site.unit)] = 0.0;
    }
    const Tensor expected = ablated.forward(x);
    Rng reset_rng = rng.split(999);
    reset_neuron(m, site, reset_rng);
    const Tensor got = m.forward(x);
    if (!(got == expected)) {
      r.status = Status::fail;
      r.detail = "trial " + std::to_string(t) + ": reset of " + to_string(site) + " differs from ablation";
      return r;
    }
  }
  r.detail = std::to_string(trials) + " resets";
  return r;
}

inline Result monotone_tau(int cases = 20) {
  Result r{"monotone-tau", Status::pass, {}};
  Rng rng(606);
  for (int i = 0; i < cases; ++i) {
    detail::Case c = detail::make_case(i, rng);
    const auto scores = detail::scores_for(c.model, {c.x}, {c.loss});
    for (Metric metric : {Metric::redo, Metric::grama}) {
      std::size_t prev = 0;
      for (int k = 0; k <= 40; ++k) {
        const double tau = 0.05 * k;
        const std::size_t n = classify(scores, tau, metric).sites.size();
        if (n < prev) {
          r.status = Status::fail;
          r.detail = c.label + ": " + to_string(metric) + " count drops from " + std::to_string(prev) + " to " +
                     std::to_string(n) + " at tau " + detail::num(tau);
          return r;
        }
        prev = n;
      }
    }
  }
  r.detail = std::to_string(cases) + " nets, tau in [0, 2]";
  return r;
}

inline std::vector<Result> run_all() {
  return {finite_differences(),
          dormant_zero_gradient(ActivationKind::relu),
          dormant_zero_gradient(ActivationKind::leaky_relu),
          score_normalization(),
          gradient_scale_invariance(),
          function_preservation(),
          monotone_tau()};
}

/// Prints one line per property; true when nothing failed.
inline bool report(const std::vector<Result>& results, std::ostream& os) {
  bool ok = true;
  for (const auto& r : results) {
    os << to_string(r.status) << "  " << r.name;
    if (!r.detail.empty()) os << "  (" << r.detail << ")";
    os << "\n";
    ok = ok && r.status != Status::fail;
  }
  return ok;
}

}  // namespace plab::verify

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "plab/error.hpp"
#include "plab/metrics.hpp"
#include "plab/net.hpp"
#include "plab/rng.hpp"

namespace plab {

struct ResetPolicy {
  Metric metric = Metric::grama;
  double tau = 0.01;
  std::int64_t period = 1000;
  double max_fraction = 1.0;
  std::optional<std::int64_t> grace;       // default: period
  std::optional<bool> include_layernorm;  // default: true for grama, false for redo
  bool zero_bias = true;

  [[nodiscard]] std::int64_t grace_steps() const { return grace.value_or(period); }
  [[nodiscard]] bool layernorm_enabled() const { return include_layernorm.value_or(metric == Metric::grama); }

  void validate() const {
    if (period < 1) throw Error(ErrorCode::config, "policy.period must be >= 1");
    if (!(tau >= 0.0)) throw Error(ErrorCode::invalid_threshold, "policy.tau must be >= 0");
    if (!(max_fraction >= 0.0 && max_fraction <= 1.0)) throw Error(ErrorCode::config, "policy.max_fraction must be in [0,1]");
    if (grace && *grace < 0) throw Error(ErrorCode::config, "policy.grace must be >= 0");
  }

  friend bool operator==(const ResetPolicy&, const ResetPolicy&) = default;
};

struct ResetEvent {
  std::int64_t step = 0;
  NeuronSite site;
  Metric metric = Metric::grama;
  double value = 0.0;
  double tau = 0.0;
};

/// Step of the most recent reset per site; a site is exempt while
/// step - last <= grace.
class GraceTable {
 public:
  [[nodiscard]] bool exempt(const NeuronSite& s, std::int64_t step, std::int64_t grace) const {
    auto it = last_.find(s);
    return it != last_.end() && step - it->second <= grace;
  }
  void mark(const NeuronSite& s, std::int64_t step) { last_[s] = step; }
  [[nodiscard]] std::size_t size() const { return last_.size(); }

 private:
  std::map<NeuronSite, std::int64_t> last_;
};

namespace detail {

// The linear node whose row `unit` produces the pre-activation of an
// activation node, looking through per-feature nodes (layernorm,
// activation). -1 when the path runs into a merge or the input.
inline int owning_linear(const Model& m, int activation_node) {
  int id = m.node(activation_node).inputs.at(0);
  while (true) {
    const Node& n = m.node(id);
    if (n.kind == NodeKind::linear) return id;
    if (n.kind == NodeKind::layernorm || n.kind == NodeKind::activation) {
      id = n.inputs.at(0);
      continue;
    }
    return -1;
  }
}

// Calls fn(linear_node_id, column) for every weight column that reads unit
// `unit` of node `src`, following concat offsets. Residual adds and other
// weightless consumers carry no outgoing weights of their own.
template <class Fn>
void for_each_outgoing(const Model& m, int src, int unit, Fn&& fn) {
  const auto& nodes = m.nodes();
  for (std::size_t id = static_cast<std::size_t>(src) + 1; id < nodes.size(); ++id) {
    const Node& n = nodes[id];
    for (std::size_t slot = 0; slot < n.inputs.size(); ++slot) {
      if (n.inputs[slot] != src) continue;
      if (n.kind == NodeKind::linear) {
        fn(static_cast<int>(id), unit);
      } else if (n.kind == NodeKind::concat) {
        const int offset = slot == 0 ? 0 : static_cast<int>(m.node(n.inputs[0]).width);
        for_each_outgoing(m, static_cast<int>(id), offset + unit, fn);
      }
    }
  }
}

}  // namespace detail

struct ResetOptions {
  bool zero_bias = true;
};

/// Reinitializes one neuron. Post-activation site: incoming weight row
/// resampled from the owning linear layer's InitSpec, incoming bias zeroed
/// (or resampled), every outgoing weight column zeroed. Layernorm feature:
/// gain 1, shift 0. Adam moments of every touched entry are cleared.
inline ResetEvent reset_neuron(Model& model, const NeuronSite& site, Rng& rng, ResetOptions opts = {}) {
  if (!model.has_site(site)) throw Error(ErrorCode::not_found, "site " + to_string(site));
  const auto unit = static_cast<std::size_t>(site.unit);

  if (site.kind == SiteKind::layernorm_feature) {
    Node& ln = model.node(site.layer);
    ln.gain.value[unit] = ln.gain.init.draw(rng);
    ln.shift.value[unit] = ln.shift.init.draw(rng);
    ln.gain.clear_moments(unit);
    ln.shift.clear_moments(unit);
  } else {
    if (const int lin = detail::owning_linear(model, site.layer); lin >= 0) {
      Node& n = model.node(lin);
      const std::size_t fan_in = n.weight.value.cols();
      for (std::size_t c = 0; c < fan_in; ++c) {
        const std::size_t k = unit * fan_in + c;
        n.weight.value[k] = n.weight.init.draw(rng);
        n.weight.clear_moments(k);
      }
      n.bias.value[unit] = opts.zero_bias ? 0.0 : n.bias.init.draw(rng);
      n.bias.clear_moments(unit);
    }
    detail::for_each_outgoing(model, site.layer, site.unit, [&](int consumer, int column) {
      Node& c = model.node(consumer);
      const std::size_t fan_in = c.weight.value.cols();
      for (std::size_t r = 0; r < c.width; ++r) {
        const std::size_t k = r * fan_in + static_cast<std::size_t>(column);
        c.weight.value[k] = 0.0;
        c.weight.clear_moments(k);
      }
    });
  }
  return ResetEvent{0, site, Metric::grama, 0.0, 0.0};
}

inline std::size_t reset_cap(double max_fraction, std::size_t total) {
  return static_cast<std::size_t>(std::ceil(max_fraction * static_cast<double>(total) - 1e-9));
}

/// One application of the periodic reset rule: classify, drop sites still
/// inside their grace period, cap to the lowest-scoring ones, reset.
inline std::vector<ResetEvent> apply_policy(Model& model, std::span<const LayerScores> scores,
                                            const ResetPolicy& policy, std::int64_t step, Rng& rng,
                                            GraceTable& grace) {
  const Classification cls =
      classify(scores, policy.tau, policy.metric, ClassifyOptions{policy.layernorm_enabled()});

  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < cls.sites.size(); ++k) {
    if (!grace.exempt(cls.sites[k], step, policy.grace_steps())) keep.push_back(k);
  }
  const std::size_t cap = reset_cap(policy.max_fraction, cls.total);
  if (keep.size() > cap) {
    std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) { return cls.values[a] < cls.values[b]; });
    keep.resize(cap);
    std::sort(keep.begin(), keep.end());
  }

  std::vector<ResetEvent> events;
  events.reserve(keep.size());
  for (std::size_t k : keep) {
    ResetEvent ev = reset_neuron(model, cls.sites[k], rng, ResetOptions{policy.zero_bias});
    ev.step = step;
    ev.metric = policy.metric;
    ev.value = cls.values[k];
    ev.tau = policy.tau;
    grace.mark(cls.sites[k], step);
    events.push_back(ev);
  }
  return events;
}

/// Zero-and-freeze removal. Post-activation: unit output forced to 0,
/// outgoing columns zeroed and frozen, incoming row and bias frozen.
/// Layernorm feature: gain and shift zeroed and frozen. Pruned sites are
/// excluded from `acc` when given.
inline void prune_sites(Model& model, std::span<const NeuronSite> sites, ActivityAccumulator* acc = nullptr) {
  for (const auto& s : sites)
    if (!model.has_site(s)) throw Error(ErrorCode::not_found, "site " + to_string(s));

  for (const auto& s : sites) {
    const auto unit = static_cast<std::size_t>(s.unit);
    if (s.kind == SiteKind::layernorm_feature) {
      Node& ln = model.node(s.layer);
      for (Param* p : {&ln.gain, &ln.shift}) {
        p->value[unit] = 0.0;
        p->clear_moments(unit);
        p->frozen[unit] = 1;
      }
    } else {
      model.node(s.layer).pruned[unit] = 1;
      if (const int lin = detail::owning_linear(model, s.layer); lin >= 0) {
        Node& n = model.node(lin);
        const std::size_t fan_in = n.weight.value.cols();
        for (std::size_t c = 0; c < fan_in; ++c) n.weight.frozen[unit * fan_in + c] = 1;
        n.bias.frozen[unit] = 1;
      }
      detail::for_each_outgoing(model, s.layer, s.unit, [&](int consumer, int column) {
        Node& c = model.node(consumer);
        const std::size_t fan_in = c.weight.value.cols();
        for (std::size_t r = 0; r < c.width; ++r) {
          const std::size_t k = r * fan_in + static_cast<std::size_t>(column);
          c.weight.value[k] = 0.0;
          c.weight.clear_moments(k);
          c.weight.frozen[k] = 1;
        }
      });
    }
    if (acc) acc->exclude(s);
  }
}

}  // namespace plab

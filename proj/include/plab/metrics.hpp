#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "plab/error.hpp"
#include "plab/net.hpp"

namespace plab {

enum class Metric { redo, grama };

inline std::string to_string(Metric m) { return m == Metric::redo ? "redo" : "grama"; }

/// Running per-site sums of batch-mean |activation| and |gradient|. The
/// empirical expectation over D is the mean over the steps since the last
/// drain.
class ActivityAccumulator {
 public:
  ActivityAccumulator() = default;
  explicit ActivityAccumulator(std::vector<NeuronSite> sites)
      : sites_(std::move(sites)), act_(sites_.size(), 0.0), grad_(sites_.size(), 0.0), excluded_(sites_.size(), 0) {}

  void accumulate(std::span<const TapRecord> taps) {
    if (taps.size() != sites_.size()) {
      throw Error(ErrorCode::inconsistent_sites, "expected " + std::to_string(sites_.size()) + " taps, got " +
                                                     std::to_string(taps.size()));
    }
    for (std::size_t k = 0; k < taps.size(); ++k) {
      if (taps[k].site != sites_[k]) {
        throw Error(ErrorCode::inconsistent_sites, "tap " + to_string(taps[k].site) + " at position of " +
                                                       to_string(sites_[k]));
      }
    }
    for (std::size_t k = 0; k < taps.size(); ++k) {
      if (excluded_[k]) continue;
      act_[k] += taps[k].activation;
      grad_[k] += taps[k].gradient;
    }
    ++count_;
  }

  /// Mean statistics of the current window; clears the sums.
  struct Window {
    std::vector<double> activation;
    std::vector<double> gradient;
    std::int64_t count = 0;
  };

  Window drain() {
    Window w{mean_activation(), mean_gradient(), count_};
    std::fill(act_.begin(), act_.end(), 0.0);
    std::fill(grad_.begin(), grad_.end(), 0.0);
    count_ = 0;
    return w;
  }

  /// Removes a site from all future windows (pruned units).
  void exclude(const NeuronSite& s) {
    auto it = std::find(sites_.begin(), sites_.end(), s);
    if (it == sites_.end() || *it != s) throw Error(ErrorCode::not_found, "site " + to_string(s));
    const auto k = static_cast<std::size_t>(it - sites_.begin());
    excluded_[k] = 1;
    act_[k] = 0.0;
    grad_[k] = 0.0;
  }

  [[nodiscard]] bool is_excluded(std::size_t k) const { return excluded_[k] != 0; }
  [[nodiscard]] const std::vector<NeuronSite>& sites() const { return sites_; }
  [[nodiscard]] std::int64_t count() const { return count_; }
  [[nodiscard]] const std::vector<double>& activation_sums() const { return act_; }
  [[nodiscard]] const std::vector<double>& gradient_sums() const { return grad_; }

  [[nodiscard]] std::vector<double> mean_activation() const { return scaled(act_); }
  [[nodiscard]] std::vector<double> mean_gradient() const { return scaled(grad_); }

 private:
  [[nodiscard]] std::vector<double> scaled(const std::vector<double>& v) const {
    std::vector<double> out(v.size(), 0.0);
    if (count_ == 0) return out;
    const double inv = 1.0 / static_cast<double>(count_);
    for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[k] * inv;
    return out;
  }

  std::vector<NeuronSite> sites_;
  std::vector<double> act_;
  std::vector<double> grad_;
  std::vector<std::uint8_t> excluded_;
  std::int64_t count_ = 0;
};

/// Normalized scores of one layer (one node and site kind). `units` lists
/// the participating unit indices; excluded units are absent and do not
/// count toward H.
struct LayerScores {
  int layer = 0;
  SiteKind kind = SiteKind::post_activation;
  std::vector<int> units;
  std::vector<double> S;
  std::vector<double> G;
  double mean_activation = 0.0;
  double mean_gradient = 0.0;

  [[nodiscard]] NeuronSite site(std::size_t k) const { return {layer, units[k], kind}; }
};

namespace detail {
inline std::vector<double> normalize_by_mean(const std::vector<double>& x, double& mean_out) {
  mean_out = x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  std::vector<double> out(x.size(), 0.0);
  if (mean_out > 0.0)
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] / mean_out;
  return out;
}
}  // namespace detail

/// S_i = mean|h_i| / layer mean, G_i = mean|dL/dz_i| / layer mean. A layer
/// whose mean statistic is exactly zero scores 0 everywhere.
inline std::vector<LayerScores> compute_scores(std::span<const NeuronSite> sites, std::span<const double> mean_act,
                                               std::span<const double> mean_grad,
                                               std::span<const std::uint8_t> excluded = {}) {
  std::vector<LayerScores> out;
  std::vector<double> acts, grads;
  for (std::size_t k = 0; k < sites.size();) {
    LayerScores ls;
    ls.layer = sites[k].layer;
    ls.kind = sites[k].kind;
    acts.clear();
    grads.clear();
    std::size_t j = k;
    for (; j < sites.size() && sites[j].layer == ls.layer && sites[j].kind == ls.kind; ++j) {
      if (!excluded.empty() && excluded[j]) continue;
      ls.units.push_back(sites[j].unit);
      acts.push_back(mean_act[j]);
      grads.push_back(mean_grad[j]);
    }
    k = j;
    if (ls.units.empty()) continue;
    ls.S = detail::normalize_by_mean(acts, ls.mean_activation);
    ls.G = detail::normalize_by_mean(grads, ls.mean_gradient);
    out.push_back(std::move(ls));
  }
  return out;
}

inline std::vector<LayerScores> compute_scores(const ActivityAccumulator& acc) {
  if (acc.count() == 0) throw Error(ErrorCode::empty_window, "no steps accumulated");
  const auto& sites = acc.sites();
  std::vector<std::uint8_t> excluded(sites.size(), 0);
  for (std::size_t k = 0; k < sites.size(); ++k) excluded[k] = acc.is_excluded(k) ? 1 : 0;
  const auto a = acc.mean_activation();
  const auto g = acc.mean_gradient();
  return compute_scores(sites, a, g, excluded);
}

struct Classification {
  std::vector<NeuronSite> sites;  // inactive, in site order
  std::vector<double> values;     // their scores
  std::size_t total = 0;
  double ratio = 0.0;
};

struct ClassifyOptions {
  bool include_layernorm = true;
};

/// Sites with score <= tau (inclusive), S for redo and G for grama.
inline Classification classify(std::span<const LayerScores> scores, double tau, Metric metric,
                               ClassifyOptions opts = {}) {
  if (!(tau >= 0.0)) throw Error(ErrorCode::invalid_threshold, "tau must be >= 0, got " + std::to_string(tau));
  Classification c;
  for (const auto& ls : scores) {
    if (!opts.include_layernorm && ls.kind == SiteKind::layernorm_feature) continue;
    const auto& v = metric == Metric::redo ? ls.S : ls.G;
    for (std::size_t k = 0; k < v.size(); ++k) {
      ++c.total;
      if (v[k] <= tau) {
        c.sites.push_back(ls.site(k));
        c.values.push_back(v[k]);
      }
    }
  }
  c.ratio = c.total ? static_cast<double>(c.sites.size()) / static_cast<double>(c.total) : 0.0;
  return c;
}

enum class Quadrant { high_high, high_expr_low_learn, low_expr_high_learn, low_low };

inline std::string to_string(Quadrant q) {
  switch (q) {
    case Quadrant::high_high: return "high/high";
    case Quadrant::high_expr_low_learn: return "high-expr/low-learn";
    case Quadrant::low_expr_high_learn: return "low-expr/high-learn";
    case Quadrant::low_low: return "low/low";
  }
  return "?";
}

struct QuadrantReport {
  std::vector<NeuronSite> sites;
  std::vector<std::uint8_t> top_expressive;
  std::vector<std::uint8_t> top_learning;
  std::vector<Quadrant> label;

  [[nodiscard]] std::size_t count(Quadrant q) const {
    return static_cast<std::size_t>(std::count(label.begin(), label.end(), q));
  }
};

namespace detail {
// Flags the ceil(n/4) largest values; ties go to the earlier site.
inline std::vector<std::uint8_t> top_quartile(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  const std::size_t k = (v.size() + 3) / 4;
  std::vector<std::uint8_t> flags(v.size(), 0);
  for (std::size_t i = 0; i < k; ++i) flags[order[i]] = 1;
  return flags;
}
}  // namespace detail

/// Expressive (|h|) versus learning (|grad|) capacity, top 25% of each
/// ranking over all non-excluded sites of the accumulator.
inline QuadrantReport quadrants(const ActivityAccumulator& acc) {
  if (acc.count() == 0) throw Error(ErrorCode::empty_window, "no steps accumulated");
  QuadrantReport rep;
  std::vector<double> a, g;
  const auto ma = acc.mean_activation();
  const auto mg = acc.mean_gradient();
  for (std::size_t k = 0; k < acc.sites().size(); ++k) {
    if (acc.is_excluded(k)) continue;
    rep.sites.push_back(acc.sites()[k]);
    a.push_back(ma[k]);
    g.push_back(mg[k]);
  }
  if (rep.sites.size() < 4) {
    throw Error(ErrorCode::too_few_sites, "quadrant analysis needs >= 4 sites, have " + std::to_string(rep.sites.size()));
  }
  rep.top_expressive = detail::top_quartile(a);
  rep.top_learning = detail::top_quartile(g);
  rep.label.resize(rep.sites.size());
  for (std::size_t k = 0; k < rep.sites.size(); ++k) {
    const bool e = rep.top_expressive[k], l = rep.top_learning[k];
    rep.label[k] = e && l ? Quadrant::high_high
                 : e      ? Quadrant::high_expr_low_learn
                 : l      ? Quadrant::low_expr_high_learn
                          : Quadrant::low_low;
  }
  return rep;
}

}  // namespace plab

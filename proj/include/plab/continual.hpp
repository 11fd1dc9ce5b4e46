#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "plab/error.hpp"
#include "plab/metrics.hpp"
#include "plab/net.hpp"
#include "plab/optim.hpp"
#include "plab/reset.hpp"
#include "plab/rng.hpp"
#include "plab/tensor.hpp"
#include "plab/zoo.hpp"

namespace plab {

/// Class-incremental Gaussian-cluster classification.
///
/// Class c has mean s * u_c with u_c ~ N(0, I/d), so the expected distance
/// between two means is s * sqrt(2) regardless of d; samples are
/// mean + sigma * N(0, I).
struct TaskStream {
  std::size_t classes = 10;
  std::size_t dim = 32;
  double separation = 3.0;
  double noise = 1.0;
  int epochs_per_class = 15;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 100;
  std::size_t start_classes = 2;
  std::uint64_t seed = 0;

  [[nodiscard]] int total_epochs() const {
    return epochs_per_class * static_cast<int>(classes - std::min(start_classes, classes) + 1);
  }

  [[nodiscard]] std::size_t seen_at(int epoch) const {
    return std::min(classes, start_classes + static_cast<std::size_t>(epoch / epochs_per_class));
  }

  void validate() const {
    if (classes < 1 || dim < 1) throw Error(ErrorCode::config, "task.classes and task.dim must be >= 1");
    if (start_classes < 1 || start_classes > classes) throw Error(ErrorCode::config, "task.start_classes must be in [1, classes]");
    if (epochs_per_class < 1) throw Error(ErrorCode::config, "task.epochs_per_class must be >= 1");
    if (train_per_class < 1 || test_per_class < 1) throw Error(ErrorCode::config, "task.train_per_class and task.test_per_class must be >= 1");
    if (!(noise >= 0.0) || !(separation >= 0.0)) throw Error(ErrorCode::config, "task.noise and task.separation must be >= 0");
  }

  friend bool operator==(const TaskStream&, const TaskStream&) = default;
};

/// Samples are stored class-major: rows [c*n, (c+1)*n) belong to class c.
struct Dataset {
  Tensor x;
  std::vector<int> y;
};

struct StreamData {
  Tensor means;
  Dataset train;
  Dataset test;
};

inline StreamData make_stream(const TaskStream& t) {
  t.validate();
  const Rng root(t.seed);
  StreamData d;
  d.means = Tensor::matrix(static_cast<std::int64_t>(t.classes), static_cast<std::int64_t>(t.dim));
  Rng mr = root.split(0);
  const double scale = t.separation / std::sqrt(static_cast<double>(t.dim));
  for (auto& v : d.means.data()) v = scale * mr.normal();

  auto draw = [&](std::size_t per_class, std::uint64_t stream) {
    Dataset ds;
    ds.x = Tensor::matrix(static_cast<std::int64_t>(per_class * t.classes), static_cast<std::int64_t>(t.dim));
    Rng r = root.split(stream);
    for (std::size_t c = 0; c < t.classes; ++c)
      for (std::size_t k = 0; k < per_class; ++k) {
        const std::size_t row = c * per_class + k;
        for (std::size_t j = 0; j < t.dim; ++j) ds.x.at(row, j) = d.means.at(c, j) + t.noise * r.normal();
        ds.y.push_back(static_cast<int>(c));
      }
    return ds;
  };
  d.train = draw(t.train_per_class, 1);
  d.test = draw(t.test_per_class, 2);
  return d;
}

/// Softmax cross-entropy averaged over the batch. Returns the loss and
/// writes dL/dlogits into `grad`.
inline double softmax_xent(const Tensor& logits, std::span<const int> labels, Tensor& grad) {
  grad = Tensor(logits.shape(), 0.0);
  const std::size_t n = logits.rows(), k = logits.cols();
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.raw() + b * k;
    const double mx = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    const double lse = mx + std::log(sum);
    loss += lse - z[labels[b]];
    for (std::size_t j = 0; j < k; ++j) grad.at(b, j) = std::exp(z[j] - lse) * inv;
    grad.at(b, static_cast<std::size_t>(labels[b])) -= inv;
  }
  return loss * inv;
}

struct ContinualConfig {
  TaskStream stream;
  ArchSpec arch;
  AdamConfig adam;
  std::size_t batch = 32;
  std::optional<ResetPolicy> policy;
  double tau_grama = 0.01;
  double tau_redo = 0.02;
};

struct EpochRow {
  std::int64_t step = 0;
  int epoch = 0;
  std::size_t seen_classes = 0;
  double accuracy = 0.0;
  double inactive_ratio_grama = 0.0;
  double inactive_ratio_redo = 0.0;
  std::int64_t resets_cum = 0;

  friend bool operator==(const EpochRow&, const EpochRow&) = default;
};

struct ContinualTrace {
  std::vector<EpochRow> rows;
  std::vector<ResetEvent> events;
  std::vector<NeuronSite> pruned;

  [[nodiscard]] double final_accuracy() const { return rows.empty() ? 0.0 : rows.back().accuracy; }
  [[nodiscard]] double peak_accuracy(std::size_t seen) const {
    double best = 0.0;
    for (const auto& r : rows)
      if (r.seen_classes == seen) best = std::max(best, r.accuracy);
    return best;
  }
};

/// Inactive fraction per metric over one window. grama counts layernorm
/// features, redo counts post-activation sites only.
struct InactiveRatios {
  double grama = 0.0;
  double redo = 0.0;
};

inline InactiveRatios inactive_ratios(std::span<const LayerScores> scores, double tau_grama, double tau_redo) {
  return {classify(scores, tau_grama, Metric::grama, {.include_layernorm = true}).ratio,
          classify(scores, tau_redo, Metric::redo, {.include_layernorm = false}).ratio};
}

/// Per-epoch callback with the scores of that epoch's training batches.
/// Returning a site list prunes those sites before the next epoch.
using EpochHook = std::function<std::vector<NeuronSite>(int epoch, std::span<const LayerScores> scores)>;

/// Called before each policy application with the window's scores;
/// returned sites are pruned before the policy runs.
using CheckHook = std::function<std::vector<NeuronSite>(int check, std::span<const LayerScores> scores)>;

inline double accuracy(Model& model, const Dataset& data, std::size_t rows) {
  if (rows == 0) return 0.0;
  Tensor x = Tensor::matrix(static_cast<std::int64_t>(rows), static_cast<std::int64_t>(data.x.cols()));
  std::copy_n(data.x.raw(), rows * data.x.cols(), x.raw());
  const Tensor& logits = model.forward(x);
  std::size_t hit = 0;
  for (std::size_t b = 0; b < rows; ++b) {
    const double* z = logits.raw() + b * logits.cols();
    const auto pred = static_cast<int>(std::max_element(z, z + logits.cols()) - z);
    hit += pred == data.y[b];
  }
  return static_cast<double>(hit) / static_cast<double>(rows);
}

/// Trains on a growing label set. A new class enters every
/// `epochs_per_class` epochs. With a policy, resets run at every class
/// injection and every `period` optimizer steps. Each epoch records held-out
/// accuracy over the seen classes and the inactive ratios of that epoch's
/// training window.
inline ContinualTrace run_continual(const ContinualConfig& cfg, std::uint64_t seed, const EpochHook& epoch_hook = {},
                                    const CheckHook& check_hook = {}) {
  const TaskStream& ts = cfg.stream;
  ts.validate();
  if (cfg.arch.input_dim != ts.dim || cfg.arch.output_dim != ts.classes)
    throw Error(ErrorCode::invalid_arch, "arch dims must be (task.dim -> task.classes)");
  if (cfg.batch < 1) throw Error(ErrorCode::config, "batch must be >= 1");
  if (cfg.policy) cfg.policy->validate();

  const StreamData data = make_stream(ts);
  const Rng root(seed);
  Rng init_rng = root.split(1);
  Rng shuffle_rng = root.split(2);
  Rng reset_rng = root.split(3);
  Model model = build(cfg.arch, init_rng);
  Adam opt(cfg.adam);
  const auto sites = model.sites();
  ActivityAccumulator window(sites);
  ActivityAccumulator epoch_acc(sites);
  GraceTable grace;
  ContinualTrace trace;
  std::int64_t step = 0;
  int checks = 0;

  auto prune = [&](const std::vector<NeuronSite>& s) {
    if (s.empty()) return;
    prune_sites(model, s, &window);
    for (const auto& site : s) epoch_acc.exclude(site);
    trace.pruned.insert(trace.pruned.end(), s.begin(), s.end());
  };

  auto check = [&] {
    if (window.count() == 0) return;
    const auto scores = compute_scores(window);
    if (check_hook) {
      prune(check_hook(checks, scores));
    }
    ++checks;
    const auto fresh = check_hook ? compute_scores(window) : scores;
    auto ev = apply_policy(model, fresh, *cfg.policy, step, reset_rng, grace);
    trace.events.insert(trace.events.end(), ev.begin(), ev.end());
    window.drain();
  };

  const std::size_t n_per = ts.train_per_class;
  std::vector<std::size_t> order;
  Tensor xb, grad;
  std::vector<int> yb;
  std::size_t prev_seen = ts.seen_at(0);

  for (int epoch = 0; epoch < ts.total_epochs(); ++epoch) {
    const std::size_t seen = ts.seen_at(epoch);
    if (seen != prev_seen && cfg.policy) check();
    prev_seen = seen;

    order.resize(seen * n_per);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t nb = std::min(cfg.batch, order.size() - start);
      xb = Tensor::matrix(static_cast<std::int64_t>(nb), static_cast<std::int64_t>(ts.dim));
      yb.resize(nb);
      for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t row = order[start + b];
        std::copy_n(data.train.x.raw() + row * ts.dim, ts.dim, xb.raw() + b * ts.dim);
        yb[b] = data.train.y[row];
      }
      const Tensor& logits = model.forward(xb);
      softmax_xent(logits, yb, grad);
      const auto taps = model.backward(grad);
      window.accumulate(taps);
      epoch_acc.accumulate(taps);
      opt.step(model);
      ++step;
      if (cfg.policy && step % cfg.policy->period == 0) check();
    }

    EpochRow row;
    row.step = step;
    row.epoch = epoch;
    row.seen_classes = seen;
    row.accuracy = accuracy(model, data.test, seen * ts.test_per_class);
    const auto scores = compute_scores(epoch_acc);
    const auto r = inactive_ratios(scores, cfg.tau_grama, cfg.tau_redo);
    row.inactive_ratio_grama = r.grama;
    row.inactive_ratio_redo = r.redo;
    row.resets_cum = static_cast<std::int64_t>(trace.events.size());
    trace.rows.push_back(row);
    if (epoch_hook) prune(epoch_hook(epoch, scores));
    epoch_acc.drain();
  }
  return trace;
}

struct CohortTrace {
  int sample_epoch = -1;
  std::vector<NeuronSite> sites;
  std::vector<std::vector<double>> history;  // per later epoch, G of each cohort site
  std::size_t available = 0;

  /// Fraction of the cohort whose G exceeded the threshold at least once.
  [[nodiscard]] double fraction_recovered(double tau) const {
    if (sites.empty()) return 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < sites.size(); ++k) {
      bool up = false;
      for (const auto& h : history) up = up || h[k] > tau;
      n += up;
    }
    return static_cast<double>(n) / static_cast<double>(sites.size());
  }
};

/// Vanilla run; at the last epoch before the first class injection, samples
/// up to `cohort_size` sites with G <= tau and records their G each later
/// epoch. An empty cohort yields an empty history.
inline CohortTrace trace_inactive_cohort(ContinualConfig cfg, std::uint64_t seed, double tau = 0.0095,
                                         std::size_t cohort_size = 1000) {
  cfg.policy.reset();
  CohortTrace ct;
  ct.sample_epoch = cfg.stream.epochs_per_class - 1;
  Rng pick = Rng(seed).split(4);
  auto find_g = [](std::span<const LayerScores> scores, const NeuronSite& s) {
    for (const auto& ls : scores) {
      if (ls.layer != s.layer || ls.kind != s.kind) continue;
      for (std::size_t k = 0; k < ls.units.size(); ++k)
        if (ls.units[k] == s.unit) return ls.G[k];
    }
    return 0.0;
  };
  run_continual(cfg, seed, [&](int epoch, std::span<const LayerScores> scores) {
    if (epoch == ct.sample_epoch) {
      const auto cls = classify(scores, tau, Metric::grama);
      ct.available = cls.sites.size();
      std::vector<NeuronSite> pool = cls.sites;
      const std::size_t take = std::min(cohort_size, pool.size());
      for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[i + pick.below(pool.size() - i)]);
      pool.resize(take);
      std::sort(pool.begin(), pool.end());
      ct.sites = std::move(pool);
    } else if (epoch > ct.sample_epoch && !ct.sites.empty()) {
      std::vector<double> g;
      g.reserve(ct.sites.size());
      for (const auto& s : ct.sites) g.push_back(find_g(scores, s));
      ct.history.push_back(std::move(g));
    }
    return std::vector<NeuronSite>{};
  });
  return ct;
}

/// Sites holding the lowest `fraction` of G over all scored sites (ties by
/// site order).
inline std::vector<NeuronSite> lowest_fraction(std::span<const LayerScores> scores, double fraction) {
  std::vector<NeuronSite> sites;
  std::vector<double> g;
  for (const auto& ls : scores)
    for (std::size_t k = 0; k < ls.G.size(); ++k) {
      sites.push_back(ls.site(k));
      g.push_back(ls.G[k]);
    }
  std::vector<std::size_t> order(sites.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g[a] < g[b]; });
  const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(sites.size())));
  std::vector<NeuronSite> out;
  for (std::size_t i = 0; i < n && i < order.size(); ++i) out.push_back(sites[order[i]]);
  std::sort(out.begin(), out.end());
  return out;
}

struct RatioPoint {
  double fraction = 0.0;
  double final_accuracy = 0.0;
  std::size_t frozen = 0;
};

/// Policy run where, at the first check, the lowest-G `fraction` of sites is
/// pruned (zeroed and frozen) and so never reset afterwards.
inline ContinualTrace run_frozen_fraction(const ContinualConfig& cfg, double fraction, std::uint64_t seed) {
  if (!cfg.policy) throw Error(ErrorCode::config, "ratio study needs a policy");
  return run_continual(cfg, seed, {}, [&](int check, std::span<const LayerScores> scores) {
    return check == 0 ? lowest_fraction(scores, fraction) : std::vector<NeuronSite>{};
  });
}

inline std::vector<RatioPoint> run_controlled_ratio(const ContinualConfig& cfg, std::span<const double> fractions,
                                                    std::uint64_t seed) {
  double prev = -1.0;
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0) || f <= prev) throw Error(ErrorCode::config, "fractions must be increasing in [0,1]");
    prev = f;
  }
  std::vector<RatioPoint> out;
  for (double f : fractions) {
    const auto t = run_frozen_fraction(cfg, f, seed);
    out.push_back({f, t.final_accuracy(), t.pruned.size()});
  }
  return out;
}

/// Vanilla training with a one-off pruning of the sites `metric` flags at
/// threshold `tau` after epoch `prune_epoch`.
inline ContinualTrace run_pruned(ContinualConfig cfg, Metric metric, double tau, int prune_epoch, std::uint64_t seed) {
  cfg.policy.reset();
  return run_continual(cfg, seed, [&](int epoch, std::span<const LayerScores> scores) {
    if (epoch != prune_epoch) return std::vector<NeuronSite>{};
    return classify(scores, tau, metric, {.include_layernorm = metric == Metric::grama}).sites;
  });
}

struct QuadrantRow {
  std::int64_t step = 0;
  int epoch = 0;
  std::size_t counts[4] = {0, 0, 0, 0};  // indexed by Quadrant
  std::size_t redo_flagged = 0;
  std::size_t grama_flagged = 0;
  std::size_t redo_flagged_low_learning = 0;   // redo-inactive sites outside the top learning quartile
  std::size_t grama_flagged_high_expression = 0;  // grama-inactive sites in the top expressive quartile
};

/// Vanilla run with a quadrant report on the last epoch of every class phase.
inline std::vector<QuadrantRow> run_quadrants(ContinualConfig cfg, std::uint64_t seed) {
  cfg.policy.reset();
  std::vector<QuadrantRow> rows;
  const int e = cfg.stream.epochs_per_class;
  auto trace = run_continual(cfg, seed, [&](int epoch, std::span<const LayerScores> scores) {
    if ((epoch + 1) % e != 0) return std::vector<NeuronSite>{};
    // one-step accumulator holding the window means
    std::vector<NeuronSite> sites;
    std::vector<TapRecord> taps;
    for (const auto& ls : scores)
      for (std::size_t k = 0; k < ls.units.size(); ++k) {
        sites.push_back(ls.site(k));
        taps.push_back({ls.site(k), ls.S[k] * ls.mean_activation, ls.G[k] * ls.mean_gradient});
      }
    ActivityAccumulator acc(sites);
    acc.accumulate(taps);
    const auto rep = quadrants(acc);
    QuadrantRow row;
    row.epoch = epoch;
    for (auto q : rep.label) ++row.counts[static_cast<int>(q)];
    const auto redo = classify(scores, cfg.tau_redo, Metric::redo);
    const auto grama = classify(scores, cfg.tau_grama, Metric::grama);
    row.redo_flagged = redo.sites.size();
    row.grama_flagged = grama.sites.size();
    for (std::size_t k = 0; k < rep.sites.size(); ++k) {
      const auto& s = rep.sites[k];
      if (!rep.top_learning[k] && std::find(redo.sites.begin(), redo.sites.end(), s) != redo.sites.end())
        ++row.redo_flagged_low_learning;
      if (rep.top_expressive[k] && std::find(grama.sites.begin(), grama.sites.end(), s) != grama.sites.end())
        ++row.grama_flagged_high_expression;
    }
    rows.push_back(row);
    return std::vector<NeuronSite>{};
  });
  for (auto& r : rows) r.step = trace.rows[static_cast<std::size_t>(r.epoch)].step;
  return rows;
}

}  // namespace plab

#pragma once

// Experiment configuration, orchestration and on-disk artifacts.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "plab/continual.hpp"
#include "plab/rl.hpp"

namespace plab {

using json = nlohmann::ordered_json;

enum class ExperimentKind { continual, rl, prune_study, ratio_study, quadrants, tau_sweep };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::continual: return "continual";
    case ExperimentKind::rl: return "rl";
    case ExperimentKind::prune_study: return "prune-study";
    case ExperimentKind::ratio_study: return "ratio-study";
    case ExperimentKind::quadrants: return "quadrants";
    case ExperimentKind::tau_sweep: return "tau-sweep";
  }
  return "continual";
}

inline std::optional<ExperimentKind> parse_kind(const std::string& s) {
  for (auto k : {ExperimentKind::continual, ExperimentKind::rl, ExperimentKind::prune_study,
                 ExperimentKind::ratio_study, ExperimentKind::quadrants, ExperimentKind::tau_sweep})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

/// Task block shared by every kind built on the class-incremental stream.
struct ContinualTask {
  TaskStream stream;
  std::optional<std::uint64_t> stream_seed;  // default: the run seed
  AdamConfig adam{.lr = 3e-3};
  std::size_t batch = 32;
  double tau_grama = 0.01;
  double tau_redo = 0.02;
  // prune-study
  Metric prune_metric = Metric::grama;
  double prune_tau = 0.01;
  int prune_epoch = 14;
  // ratio-study
  std::vector<double> fractions{0.0, 0.1, 0.25, 0.5};
  // tau-sweep: `tau_points` evenly spaced values on [tau_min, tau_max]
  double tau_min = 0.0;
  double tau_max = 0.1;
  int tau_points = 11;

  [[nodiscard]] std::vector<double> tau_grid() const {
    std::vector<double> out;
    for (int k = 0; k < tau_points; ++k)
      out.push_back(tau_points == 1 ? tau_min : tau_min + (tau_max - tau_min) * k / (tau_points - 1));
    return out;
  }

  friend bool operator==(const ContinualTask&, const ContinualTask&) = default;
};

struct RlTask {
  SacConfig sac;
  std::int64_t row_every = 1000;
  double tau_grama = 0.01;
  double tau_redo = 0.02;

  friend bool operator==(const RlTask&, const RlTask&) = default;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::continual;
  ArchSpec arch;
  std::optional<ResetPolicy> policy;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::optional<std::string> out;
  ContinualTask task;
  RlTask rl;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Architecture used when the config leaves a field out.
inline ArchSpec default_arch(ExperimentKind kind) {
  ArchSpec a;
  if (kind == ExperimentKind::rl) {
    a.family = Family::bro;
    a.layernorm = true;
    a.hidden = 32;
    a.depth = 1;
  } else {
    a.family = Family::mlp;
    a.hidden = 32;
    a.depth = 3;
  }
  return a;
}

namespace config_detail {

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::config, (path.empty() ? std::string("<root>") : path) + ": " + what);
}

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Typed field access on one JSON object; remembers which keys were read so
/// leftovers can be rejected.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[nodiscard]] const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(join(path_, key), "expected a number");
      out = v->get<double>();
    }
  }

  template <class Int>
  void integer(const std::string& key, Int& out, std::int64_t min_value) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(join(path_, key), "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < min_value) fail(join(path_, key), "must be >= " + std::to_string(min_value));
      out = static_cast<Int>(x);
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(join(path_, key), "expected true or false");
      out = v->get<bool>();
    }
  }

  std::optional<std::string> string(const std::string& key) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(join(path_, key), "expected a string");
      return v->get<std::string>();
    }
    return std::nullopt;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(join(path_, it.key()), "unknown key");
  }

  [[nodiscard]] std::string at(const std::string& key) const { return join(path_, key); }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Metric parse_metric(const std::string& s, const std::string& path) {
  if (s == "grama") return Metric::grama;
  if (s == "redo") return Metric::redo;
  fail(path, "expected \"grama\" or \"redo\", got \"" + s + "\"");
}

inline void check(bool ok, const std::string& path, const std::string& what) {
  if (!ok) fail(path, what);
}

inline ArchSpec read_arch(const json& j, ArchSpec a) {
  Fields f(j, "arch");
  if (auto s = f.string("family")) {
    if (*s == "mlp") a.family = Family::mlp;
    else if (*s == "bro") a.family = Family::bro;
    else fail("arch.family", "expected \"mlp\" or \"bro\"");
  }
  f.integer("hidden", a.hidden, 4);
  f.integer("depth", a.depth, 1);
  f.integer("depth_multiplier", a.depth_multiplier, 1);
  if (auto s = f.string("activation")) {
    auto k = parse_activation(*s);
    if (!k) fail("arch.activation", "unknown activation \"" + *s + "\"");
    a.activation = *k;
  }
  f.number("slope", a.slope);
  f.boolean("layernorm", a.layernorm);
  f.finish();
  check(a.family != Family::bro || a.layernorm, "arch.layernorm", "bro family requires layernorm");
  return a;
}

inline ResetPolicy read_policy(const json& j) {
  ResetPolicy p;
  Fields f(j, "policy");
  if (auto s = f.string("metric")) p.metric = parse_metric(*s, "policy.metric");
  f.number("tau", p.tau);
  check(p.tau >= 0.0, "policy.tau", "must be >= 0");
  f.integer("period", p.period, 1);
  f.number("max_fraction", p.max_fraction);
  check(p.max_fraction >= 0.0 && p.max_fraction <= 1.0, "policy.max_fraction", "must be in [0,1]");
  if (const json* g = f.find("grace"); g && !g->is_null()) {
    if (!g->is_number_integer() || g->get<std::int64_t>() < 0) fail("policy.grace", "expected an integer >= 0");
    p.grace = g->get<std::int64_t>();
  }
  if (const json* l = f.find("include_layernorm"); l && !l->is_null()) {
    if (!l->is_boolean()) fail("policy.include_layernorm", "expected true or false");
    p.include_layernorm = l->get<bool>();
  }
  f.boolean("zero_bias", p.zero_bias);
  f.finish();
  return p;
}

inline void read_continual_task(const json& j, ExperimentKind kind, ContinualTask& t) {
  Fields f(j, "task");
  TaskStream& s = t.stream;
  f.integer("classes", s.classes, 1);
  f.integer("dim", s.dim, 1);
  f.number("separation", s.separation);
  check(s.separation >= 0.0, "task.separation", "must be >= 0");
  f.number("noise", s.noise);
  check(s.noise >= 0.0, "task.noise", "must be >= 0");
  f.integer("epochs_per_class", s.epochs_per_class, 1);
  f.integer("train_per_class", s.train_per_class, 1);
  f.integer("test_per_class", s.test_per_class, 1);
  f.integer("start_classes", s.start_classes, 1);
  check(s.start_classes <= s.classes, "task.start_classes", "must be <= task.classes");
  if (const json* v = f.find("stream_seed"); v && !v->is_null()) {
    if (!v->is_number_unsigned()) fail("task.stream_seed", "expected an integer >= 0");
    t.stream_seed = v->get<std::uint64_t>();
  }
  f.number("lr", t.adam.lr);
  check(t.adam.lr > 0.0, "task.lr", "must be > 0");
  f.number("beta1", t.adam.beta1);
  check(t.adam.beta1 >= 0.0 && t.adam.beta1 < 1.0, "task.beta1", "must be in [0,1)");
  f.number("beta2", t.adam.beta2);
  check(t.adam.beta2 >= 0.0 && t.adam.beta2 < 1.0, "task.beta2", "must be in [0,1)");
  f.number("eps", t.adam.eps);
  check(t.adam.eps > 0.0, "task.eps", "must be > 0");
  f.integer("batch", t.batch, 1);
  f.number("tau_grama", t.tau_grama);
  check(t.tau_grama >= 0.0, "task.tau_grama", "must be >= 0");
  f.number("tau_redo", t.tau_redo);
  check(t.tau_redo >= 0.0, "task.tau_redo", "must be >= 0");
  if (kind == ExperimentKind::prune_study) {
    if (auto m = f.string("prune_metric")) t.prune_metric = parse_metric(*m, "task.prune_metric");
    f.number("prune_tau", t.prune_tau);
    check(t.prune_tau >= 0.0, "task.prune_tau", "must be >= 0");
    f.integer("prune_epoch", t.prune_epoch, 0);
    check(t.prune_epoch < s.total_epochs(), "task.prune_epoch", "must be before the last epoch");
  }
  if (kind == ExperimentKind::ratio_study) {
    if (const json* v = f.find("fractions")) {
      if (!v->is_array() || v->empty()) fail("task.fractions", "expected a non-empty array of numbers");
      t.fractions.clear();
      double prev = -1.0;
      for (const auto& x : *v) {
        if (!x.is_number()) fail("task.fractions", "expected numbers");
        const double d = x.get<double>();
        check(d >= 0.0 && d <= 1.0 && d > prev, "task.fractions", "must be increasing values in [0,1]");
        t.fractions.push_back(d);
        prev = d;
      }
    }
  }
  if (kind == ExperimentKind::tau_sweep) {
    f.number("tau_min", t.tau_min);
    f.number("tau_max", t.tau_max);
    f.integer("tau_points", t.tau_points, 1);
    check(t.tau_min >= 0.0 && t.tau_max >= t.tau_min, "task.tau_min", "need 0 <= tau_min <= tau_max");
  }
  f.finish();
}

inline void read_rl_task(const json& j, RlTask& t) {
  Fields f(j, "task");
  SacConfig& s = t.sac;
  f.number("gamma", s.gamma);
  check(s.gamma > 0.0 && s.gamma < 1.0, "task.gamma", "must be in (0,1)");
  f.number("polyak", s.polyak);
  check(s.polyak > 0.0 && s.polyak <= 1.0, "task.polyak", "must be in (0,1]");
  f.integer("batch", s.batch, 1);
  f.number("actor_lr", s.actor_lr);
  check(s.actor_lr > 0.0, "task.actor_lr", "must be > 0");
  f.number("critic_lr", s.critic_lr);
  check(s.critic_lr > 0.0, "task.critic_lr", "must be > 0");
  f.number("alpha", s.alpha);
  check(s.alpha >= 0.0, "task.alpha", "must be >= 0");
  f.integer("policy_delay", s.policy_delay, 1);
  f.integer("learning_starts", s.learning_starts, 1);
  f.integer("total_steps", s.total_steps, 1);
  f.integer("buffer_capacity", s.buffer_capacity, 1);
  f.integer("row_every", t.row_every, 1);
  f.number("tau_grama", t.tau_grama);
  check(t.tau_grama >= 0.0, "task.tau_grama", "must be >= 0");
  f.number("tau_redo", t.tau_redo);
  check(t.tau_redo >= 0.0, "task.tau_redo", "must be >= 0");
  f.finish();
}

}  // namespace config_detail

/// Validates and fills defaults. Errors name the offending field path.
inline ExperimentConfig parse_config(const json& j) {
  using namespace config_detail;
  ExperimentConfig c;
  Fields f(j, "");
  if (const json* k = f.find("kind")) {
    if (!k->is_string()) fail("kind", "expected a string");
    auto kind = parse_kind(k->get<std::string>());
    if (!kind) fail("kind", "unknown experiment kind \"" + k->get<std::string>() + "\"");
    c.kind = *kind;
  } else {
    fail("kind", "missing");
  }
  c.arch = default_arch(c.kind);
  if (const json* a = f.find("arch")) c.arch = read_arch(*a, c.arch);
  if (const json* p = f.find("policy"); p && !p->is_null()) c.policy = read_policy(*p);
  if (const json* s = f.find("seeds")) {
    if (!s->is_array() || s->empty()) fail("seeds", "expected a non-empty array");
    c.seeds.clear();
    for (const auto& x : *s) {
      if (!x.is_number_unsigned()) fail("seeds", "expected integers >= 0");
      c.seeds.push_back(x.get<std::uint64_t>());
    }
  }
  if (auto o = f.string("out")) c.out = *o;
  if (const json* t = f.find("task")) {
    if (c.kind == ExperimentKind::rl) read_rl_task(*t, c.rl);
    else read_continual_task(*t, c.kind, c.task);
  }
  f.finish();
  if (c.kind == ExperimentKind::ratio_study && !c.policy) fail("policy", "required for ratio-study");
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::config, std::string("parse error: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Full explicit form; parse_config(to_json(c)) == c.
inline json to_json(const ExperimentConfig& c) {
  json j;
  j["kind"] = to_string(c.kind);
  j["seeds"] = c.seeds;
  if (c.out) j["out"] = *c.out;
  j["arch"] = {{"family", to_string(c.arch.family)},
               {"hidden", c.arch.hidden},
               {"depth", c.arch.depth},
               {"depth_multiplier", c.arch.depth_multiplier},
               {"activation", to_string(c.arch.activation)},
               {"slope", c.arch.slope},
               {"layernorm", c.arch.layernorm}};
  if (c.policy) {
    const ResetPolicy& p = *c.policy;
    json pj = {{"metric", to_string(p.metric)}, {"tau", p.tau},         {"period", p.period},
               {"max_fraction", p.max_fraction}, {"zero_bias", p.zero_bias}};
    pj["grace"] = p.grace ? json(*p.grace) : json(nullptr);
    pj["include_layernorm"] = p.include_layernorm ? json(*p.include_layernorm) : json(nullptr);
    j["policy"] = pj;
  } else {
    j["policy"] = nullptr;
  }
  if (c.kind == ExperimentKind::rl) {
    const SacConfig& s = c.rl.sac;
    j["task"] = {{"gamma", s.gamma},
                 {"polyak", s.polyak},
                 {"batch", s.batch},
                 {"actor_lr", s.actor_lr},
                 {"critic_lr", s.critic_lr},
                 {"alpha", s.alpha},
                 {"policy_delay", s.policy_delay},
                 {"learning_starts", s.learning_starts},
                 {"total_steps", s.total_steps},
                 {"buffer_capacity", s.buffer_capacity},
                 {"row_every", c.rl.row_every},
                 {"tau_grama", c.rl.tau_grama},
                 {"tau_redo", c.rl.tau_redo}};
  } else {
    const ContinualTask& t = c.task;
    json tj = {{"classes", t.stream.classes},
               {"dim", t.stream.dim},
               {"separation", t.stream.separation},
               {"noise", t.stream.noise},
               {"epochs_per_class", t.stream.epochs_per_class},
               {"train_per_class", t.stream.train_per_class},
               {"test_per_class", t.stream.test_per_class},
               {"start_classes", t.stream.start_classes},
               {"lr", t.adam.lr},
               {"beta1", t.adam.beta1},
               {"beta2", t.adam.beta2},
               {"eps", t.adam.eps},
               {"batch", t.batch},
               {"tau_grama", t.tau_grama},
               {"tau_redo", t.tau_redo}};
    tj["stream_seed"] = t.stream_seed ? json(*t.stream_seed) : json(nullptr);
    if (c.kind == ExperimentKind::prune_study) {
      tj["prune_metric"] = to_string(t.prune_metric);
      tj["prune_tau"] = t.prune_tau;
      tj["prune_epoch"] = t.prune_epoch;
    }
    if (c.kind == ExperimentKind::ratio_study) tj["fractions"] = t.fractions;
    if (c.kind == ExperimentKind::tau_sweep) {
      tj["tau_min"] = t.tau_min;
      tj["tau_max"] = t.tau_max;
      tj["tau_points"] = t.tau_points;
    }
    j["task"] = tj;
  }
  return j;
}

inline void save_config(const ExperimentConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << to_json(c).dump(2) << "\n";
}

/// Median and quartiles with linear interpolation between order statistics.
struct Summary {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  [[nodiscard]] double iqr() const { return q3 - q1; }
};

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Summary summarize_values(const std::vector<double>& v) {
  return {quantile(v, 0.5), quantile(v, 0.25), quantile(v, 0.75)};
}

inline json summary_json(const std::vector<double>& v) {
  const Summary s = summarize_values(v);
  return {{"median", s.median}, {"q1", s.q1}, {"q3", s.q3}, {"iqr", s.iqr()}, {"values", v}};
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxx == 0.0 || syy == 0.0 ? 0.0 : sxy / std::sqrt(sxx * syy);
}

// ---- CSV / JSONL -----------------------------------------------------------

inline constexpr const char* continual_columns =
    "step,epoch,seen_classes,accuracy,inactive_ratio_grama,inactive_ratio_redo,resets_cum,seed";
inline constexpr const char* rl_columns = "step,episodic_return,inactive_ratio_grama,inactive_ratio_redo,resets_cum,seed";
inline constexpr const char* ratio_columns = "fraction,final_accuracy,frozen,seed";
inline constexpr const char* quadrant_columns =
    "step,epoch,high_high,high_expr_low_learn,low_expr_high_learn,low_low,redo_flagged,grama_flagged,"
    "redo_flagged_low_learning,grama_flagged_high_expression,seed";
inline constexpr const char* sweep_columns =
    "tau,metric,final_accuracy,final_inactive_ratio_grama,final_inactive_ratio_redo,resets_cum,seed";

/// Shortest text that parses back to the same double.
inline std::string fmt(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string continual_csv(const ContinualTrace& t, std::uint64_t seed) {
  std::string s = std::string(continual_columns) + "\n";
  for (const auto& r : t.rows)
    s += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + std::to_string(r.seen_classes) + "," +
         fmt(r.accuracy) + "," + fmt(r.inactive_ratio_grama) + "," + fmt(r.inactive_ratio_redo) + "," +
         std::to_string(r.resets_cum) + "," + std::to_string(seed) + "\n";
  return s;
}

inline std::string rl_csv(const RlTrace& t, std::uint64_t seed) {
  std::string s = std::string(rl_columns) + "\n";
  for (const auto& r : t.rows)
    s += std::to_string(r.step) + "," + fmt(r.episodic_return) + "," + fmt(r.inactive_ratio_grama) + "," +
         fmt(r.inactive_ratio_redo) + "," + std::to_string(r.resets_cum) + "," + std::to_string(seed) + "\n";
  return s;
}

inline std::string events_jsonl(const std::vector<ResetEvent>& events) {
  std::string s;
  for (const auto& e : events) {
    json j = {{"step", e.step},
              {"layer", e.site.layer},
              {"unit", e.site.unit},
              {"site_kind", to_string(e.site.kind)},
              {"metric", to_string(e.metric)},
              {"value", e.value},
              {"tau", e.tau}};
    s += j.dump() + "\n";
  }
  return s;
}

/// Parsed CSV: header names and numeric rows (the metric column of the
/// sweep CSV is mapped to 0 for grama, 1 for redo).
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw Error(ErrorCode::not_found, "column " + name);
    return static_cast<std::size_t>(it - columns.begin());
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    return out;
  };
  if (!std::getline(in, line)) throw Error(ErrorCode::io, "empty CSV");
  t.columns = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != t.columns.size()) throw Error(ErrorCode::io, "ragged CSV row: " + line);
    std::vector<double> row;
    for (const auto& c : cells) {
      if (c == "grama") row.push_back(0.0);
      else if (c == "redo") row.push_back(1.0);
      else {
        char* end = nullptr;
        const double v = std::strtod(c.c_str(), &end);
        if (end == c.c_str() || *end != '\0') throw Error(ErrorCode::io, "bad CSV cell '" + c + "'");
        row.push_back(v);
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---- Runner ----------------------------------------------------------------

struct RunOptions {
  std::optional<std::string> out;
  std::optional<std::vector<std::uint64_t>> seeds;
  int jobs = 1;
};

/// --out, then the config's "out", then $PLAB_OUT, then "runs".
inline std::filesystem::path resolve_out_dir(const ExperimentConfig& c, const RunOptions& opts) {
  if (opts.out) return *opts.out;
  if (c.out) return *c.out;
  if (const char* env = std::getenv("PLAB_OUT"); env && *env) return env;
  return "runs";
}

inline std::string seed_csv_name(std::uint64_t seed) { return "metrics_seed" + std::to_string(seed) + ".csv"; }
inline std::string seed_events_name(std::uint64_t seed) { return "events_seed" + std::to_string(seed) + ".jsonl"; }

inline ContinualConfig continual_config(const ExperimentConfig& c, std::uint64_t seed) {
  ContinualConfig cc;
  cc.stream = c.task.stream;
  cc.stream.seed = c.task.stream_seed.value_or(seed);
  cc.arch = c.arch;
  cc.arch.input_dim = cc.stream.dim;
  cc.arch.output_dim = cc.stream.classes;
  cc.adam = c.task.adam;
  cc.batch = c.task.batch;
  cc.policy = c.policy;
  cc.tau_grama = c.task.tau_grama;
  cc.tau_redo = c.task.tau_redo;
  return cc;
}

inline RlConfig rl_config(const ExperimentConfig& c) {
  RlConfig rc;
  rc.sac = c.rl.sac;
  rc.arch = c.arch;
  rc.policy = c.policy;
  rc.tau_grama = c.rl.tau_grama;
  rc.tau_redo = c.rl.tau_redo;
  rc.row_every = c.rl.row_every;
  return rc;
}

/// Everything one seed produces: its CSV and events text plus the scalar
/// results the summary aggregates.
struct SeedResult {
  std::uint64_t seed = 0;
  std::string csv;
  std::string events;
  json scalars = json::object();   // name -> value
  std::vector<json> rows;          // per-row scalars for table-shaped kinds
};

inline SeedResult run_seed(const ExperimentConfig& c, std::uint64_t seed) {
  SeedResult r;
  r.seed = seed;
  switch (c.kind) {
    case ExperimentKind::continual:
    case ExperimentKind::prune_study: {
      const ContinualConfig cc = continual_config(c, seed);
      const ContinualTrace t = c.kind == ExperimentKind::continual
                                   ? run_continual(cc, seed)
                                   : run_pruned(cc, c.task.prune_metric, c.task.prune_tau, c.task.prune_epoch, seed);
      r.csv = continual_csv(t, seed);
      r.events = events_jsonl(t.events);
      const EpochRow& last = t.rows.back();
      r.scalars["final_accuracy"] = last.accuracy;
      r.scalars["peak_accuracy_first_phase"] = t.peak_accuracy(cc.stream.seen_at(0));
      r.scalars["final_inactive_ratio_grama"] = last.inactive_ratio_grama;
      r.scalars["final_inactive_ratio_redo"] = last.inactive_ratio_redo;
      r.scalars["resets_cum"] = static_cast<double>(last.resets_cum);
      if (c.kind == ExperimentKind::prune_study) r.scalars["pruned"] = static_cast<double>(t.pruned.size());
      break;
    }
    case ExperimentKind::rl: {
      const RlTrace t = run_rl(rl_config(c), seed);
      r.csv = rl_csv(t, seed);
      r.events = events_jsonl(t.events);
      double redo = 0.0;
      for (const auto& row : t.rows) redo += row.inactive_ratio_redo;
      r.scalars["terminal_return"] = t.terminal_return();
      r.scalars["mean_inactive_ratio_grama"] = t.mean_inactive_grama();
      r.scalars["mean_inactive_ratio_redo"] = t.rows.empty() ? 0.0 : redo / static_cast<double>(t.rows.size());
      r.scalars["resets_cum"] = static_cast<double>(t.events.size());
      break;
    }
    case ExperimentKind::ratio_study: {
      const ContinualConfig cc = continual_config(c, seed);
      r.csv = std::string(ratio_columns) + "\n";
      for (double f : c.task.fractions) {
        const ContinualTrace t = run_frozen_fraction(cc, f, seed);
        r.csv += fmt(f) + "," + fmt(t.final_accuracy()) + "," + std::to_string(t.pruned.size()) + "," +
                 std::to_string(seed) + "\n";
        r.events += events_jsonl(t.events);
        r.rows.push_back({{"fraction", f}, {"final_accuracy", t.final_accuracy()},
                          {"frozen", static_cast<double>(t.pruned.size())}});
      }
      break;
    }
    case ExperimentKind::quadrants: {
      ContinualConfig cc = continual_config(c, seed);
      const auto rows = run_quadrants(cc, seed);
      r.csv = std::string(quadrant_columns) + "\n";
      for (const auto& q : rows) {
        r.csv += std::to_string(q.step) + "," + std::to_string(q.epoch);
        for (auto n : q.counts) r.csv += "," + std::to_string(n);
        r.csv += "," + std::to_string(q.redo_flagged) + "," + std::to_string(q.grama_flagged) + "," +
                 std::to_string(q.redo_flagged_low_learning) + "," + std::to_string(q.grama_flagged_high_expression) +
                 "," + std::to_string(seed) + "\n";
        r.rows.push_back({{"epoch", q.epoch},
                          {"high_high", static_cast<double>(q.counts[0])},
                          {"high_expr_low_learn", static_cast<double>(q.counts[1])},
                          {"low_expr_high_learn", static_cast<double>(q.counts[2])},
                          {"low_low", static_cast<double>(q.counts[3])},
                          {"redo_flagged_low_learning", static_cast<double>(q.redo_flagged_low_learning)},
                          {"grama_flagged_high_expression", static_cast<double>(q.grama_flagged_high_expression)}});
      }
      break;
    }
    case ExperimentKind::tau_sweep: {
      r.csv = std::string(sweep_columns) + "\n";
      for (double tau : c.task.tau_grid()) {
        json row = {{"tau", tau}};
        for (Metric m : {Metric::grama, Metric::redo}) {
          ContinualConfig cc = continual_config(c, seed);
          ResetPolicy p = c.policy.value_or(ResetPolicy{});
          p.metric = m;
          p.tau = tau;
          cc.policy = p;
          const ContinualTrace t = run_continual(cc, seed);
          const EpochRow& last = t.rows.back();
          r.csv += fmt(tau) + "," + to_string(m) + "," + fmt(last.accuracy) + "," + fmt(last.inactive_ratio_grama) +
                   "," + fmt(last.inactive_ratio_redo) + "," + std::to_string(last.resets_cum) + "," +
                   std::to_string(seed) + "\n";
          r.events += events_jsonl(t.events);
          row[to_string(m)] = {{"final_accuracy", last.accuracy},
                               {"final_inactive_ratio_grama", last.inactive_ratio_grama},
                               {"final_inactive_ratio_redo", last.inactive_ratio_redo},
                               {"resets_cum", static_cast<double>(last.resets_cum)}};
        }
        r.rows.push_back(row);
      }
      break;
    }
  }
  return r;
}

/// Aggregates per-seed results (in seed order) into the summary document.
inline json build_summary(const ExperimentConfig& c, const std::vector<SeedResult>& results) {
  json s;
  s["kind"] = to_string(c.kind);
  std::vector<std::uint64_t> seeds;
  for (const auto& r : results) seeds.push_back(r.seed);
  s["seeds"] = seeds;
  if (results.empty()) return s;
  const SeedResult& first = results.front();
  if (!first.scalars.empty()) {
    json m = json::object();
    for (auto it = first.scalars.begin(); it != first.scalars.end(); ++it) {
      std::vector<double> v;
      for (const auto& r : results) v.push_back(r.scalars.at(it.key()).get<double>());
      m[it.key()] = summary_json(v);
    }
    s["metrics"] = m;
  }
  if (!first.rows.empty()) {
    // Rows line up across seeds; numeric leaves are summarized, the
    // identifying first field is copied.
    std::function<json(const std::vector<const json*>&, bool)> merge = [&](const std::vector<const json*>& js,
                                                                             bool top) {
      json out = json::object();
      bool key_field = top;
      for (auto it = js[0]->begin(); it != js[0]->end(); ++it) {
        std::vector<const json*> parts;
        for (const json* j : js) parts.push_back(&j->at(it.key()));
        if (it->is_object()) {
          out[it.key()] = merge(parts, false);
        } else if (key_field) {
          out[it.key()] = *it;
        } else {
          std::vector<double> v;
          for (const json* p : parts) v.push_back(p->get<double>());
          out[it.key()] = summary_json(v);
        }
        key_field = false;
      }
      return out;
    };
    json rows = json::array();
    for (std::size_t k = 0; k < first.rows.size(); ++k) {
      std::vector<const json*> parts;
      for (const auto& r : results) parts.push_back(&r.rows.at(k));
      rows.push_back(merge(parts, true));
    }
    s["rows"] = rows;
    if (c.kind == ExperimentKind::ratio_study) {
      std::vector<double> f, acc;
      for (const auto& row : rows) {
        f.push_back(row["fraction"].get<double>());
        acc.push_back(row["final_accuracy"]["median"].get<double>());
      }
      s["spearman_fraction_vs_median_accuracy"] = spearman(f, acc);
    }
  }
  return s;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorCode::io, "write failed for " + p.string());
}

struct RunReport {
  std::filesystem::path out_dir;
  std::vector<std::filesystem::path> csv_files;
  std::filesystem::path summary_file;
  json summary;
};

/// Runs every seed (up to `jobs` at a time), writes per-seed CSV and JSONL
/// files, then the summary after all seeds finish.
inline RunReport run_experiment(const ExperimentConfig& c, const RunOptions& opts = {}) {
  const std::vector<std::uint64_t> seeds = opts.seeds.value_or(c.seeds);
  if (seeds.empty()) throw Error(ErrorCode::config, "seeds: empty");
  RunReport rep;
  rep.out_dir = resolve_out_dir(c, opts);
  std::error_code ec;
  std::filesystem::create_directories(rep.out_dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create " + rep.out_dir.string() + ": " + ec.message());

  std::vector<SeedResult> results(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < seeds.size();) {
      try {
        results[i] = run_seed(c, seeds[i]);
        write_text(rep.out_dir / seed_csv_name(seeds[i]), results[i].csv);
        write_text(rep.out_dir / seed_events_name(seeds[i]), results[i].events);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int jobs = std::clamp(opts.jobs, 1, static_cast<int>(seeds.size()));
  std::vector<std::thread> pool;
  for (int k = 1; k < jobs; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (auto s : seeds) rep.csv_files.push_back(rep.out_dir / seed_csv_name(s));
  rep.summary = build_summary(c, results);
  rep.summary_file = rep.out_dir / "summary.json";
  write_text(rep.summary_file, rep.summary.dump(2) + "\n");
  return rep;
}

/// Recomputes terminal-row statistics from the per-seed CSVs in `dir`.
inline json summarize_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::io, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("metrics_seed", 0) == 0 && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::not_found, "no metrics_seed*.csv in " + dir.string());
  json out;
  out["dir"] = dir.string();
  out["files"] = files.size();
  std::vector<std::string> columns;
  std::map<std::string, std::vector<double>> terminal;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream ss;
    ss << in.rdbuf();
    const CsvTable t = parse_csv(ss.str());
    if (columns.empty()) columns = t.columns;
    if (t.columns != columns) throw Error(ErrorCode::io, "mixed CSV schemas in " + dir.string());
    if (t.rows.empty()) continue;
    for (std::size_t k = 0; k < columns.size(); ++k) {
      if (columns[k] == "seed" || columns[k] == "step" || columns[k] == "epoch") continue;
      terminal[columns[k]].push_back(t.rows.back()[k]);
    }
  }
  out["columns"] = columns;
  json m = json::object();
  for (const auto& c : columns)
    if (terminal.count(c)) m[c] = summary_json(terminal[c]);
  out["terminal"] = m;
  return out;
}

}  // namespace plab

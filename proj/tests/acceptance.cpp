// Acceptance run: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "plab/experiment.hpp"
#include "support/cases.hpp"
#include "support/oracle.hpp"

using namespace plab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;  // 0: none
  std::function<Outcome()> run;
};

std::string num(double v, int prec = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), a.size() * sizeof(double)) == 0;
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

std::size_t param_count(Model& m) {
  std::size_t n = 0;
  for (Param* p : m.params()) n += p->value.size();
  return n;
}

Model dormant_relu_mlp(Rng& rng) {
  ArchSpec spec;
  spec.input_dim = 4;
  spec.output_dim = 3;
  spec.hidden = 6;
  spec.depth = 3;
  Model m = build(spec, rng);
  // Negative biases so some units are dead on a batch.
  for (auto& n : m.nodes())
    if (n.kind == NodeKind::linear)
      for (auto& b : n.bias.value.data()) b -= 0.4;
  return m;
}

std::vector<LayerScores> scores_on(Model& m, const Tensor& x, const oracle::QuadLoss& loss, double scale = 1.0) {
  ActivityAccumulator acc(m.sites());
  Tensor g = loss.grad(m.forward(x));
  for (auto& v : g.data()) v *= scale;
  acc.accumulate(m.backward(g));
  return compute_scores(acc);
}

// ---- 1 ---------------------------------------------------------------------

Outcome gradient_oracle() {
  Rng rng(11);
  const int nets = 40;
  double worst = 0.0;
  std::size_t entries = 0, sites = 0;
  for (int i = 0; i < nets; ++i) {
    auto c = oracle::random_case(i, rng);
    Model& m = c.model;
    if (param_count(m) > 100) return {false, c.label + " has " + std::to_string(param_count(m)) + " parameters"};
    const auto taps = m.backward(c.loss.grad(m.forward(c.input)));
    std::vector<std::vector<double>> analytic;
    for (Param* p : m.params()) analytic.emplace_back(p->grad.data().begin(), p->grad.data().end());
    const auto fd = oracle::param_gradients(m, c.input, c.loss, 1e-5);
    for (std::size_t p = 0; p < fd.size(); ++p)
      for (std::size_t k = 0; k < fd[p].size(); ++k, ++entries) {
        const double a = analytic[p][k], b = fd[p][k];
        if (!oracle::close(a, b))
          return {false, c.label + ": param " + std::to_string(p) + "[" + std::to_string(k) + "] reverse " + num(a, 12) +
                             " vs fd " + num(b, 12)};
        if (a != b) worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), std::abs(b)));
      }
    const auto fd_taps = oracle::tap_gradients(m, c.input, c.loss, 1e-5);
    for (std::size_t s = 0; s < taps.size(); ++s, ++sites) {
      if (!oracle::close(taps[s].gradient, fd_taps[s]))
        return {false, c.label + ": site " + to_string(taps[s].site) + " tap " + num(taps[s].gradient, 12) + " vs fd " +
                           num(fd_taps[s], 12)};
    }
  }
  return {true, std::to_string(nets) + " nets, " + std::to_string(entries) + " parameter entries, " +
                    std::to_string(sites) + " sites; worst parameter relative error " + num(worst, 3)};
}

// ---- 2 ---------------------------------------------------------------------

Outcome dormant_implies_zero_gradient() {
  Rng rng(22);
  const int pairs = 60;
  std::size_t dormant = 0;
  for (int t = 0; t < pairs; ++t) {
    Rng br = rng.split(static_cast<std::uint64_t>(t));
    Model m = dormant_relu_mlp(br);
    const Tensor x = oracle::random_batch(5, 4, rng);
    const auto loss = oracle::random_loss(5, 3, rng);
    ActivityAccumulator acc(m.sites());
    const auto taps = m.backward(loss.grad(m.forward(x)));
    for (const auto& tap : taps) {
      if (tap.activation != 0.0) continue;
      ++dormant;
      if (tap.gradient != 0.0)
        return {false, "pair " + std::to_string(t) + ": " + to_string(tap.site) + " gradient " + num(tap.gradient)};
    }
    acc.accumulate(taps);
    const auto scores = compute_scores(acc);
    const auto redo = classify(scores, 0.0, Metric::redo);
    const auto grama = classify(scores, 0.0, Metric::grama);
    for (const auto& s : redo.sites)
      if (std::find(grama.sites.begin(), grama.sites.end(), s) == grama.sites.end())
        return {false, "pair " + std::to_string(t) + ": " + to_string(s) + " redo-dormant but not grama-inactive"};
  }
  if (dormant == 0) return {false, "no dormant site encountered; the check is vacuous"};
  return {true, std::to_string(pairs) + " pairs, " + std::to_string(dormant) + " dormant sites"};
}

// ---- 3 ---------------------------------------------------------------------

Outcome normalization_invariants() {
  Rng rng(33);
  const int nets = 40;
  std::size_t layers = 0;
  double worst_mean = 0.0, worst_scale = 0.0;
  for (int i = 0; i < nets; ++i) {
    auto c = oracle::random_case(i, rng);
    const auto ref = scores_on(c.model, c.input, c.loss);
    for (const auto& ls : ref) {
      auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
      };
      if (ls.mean_activation > 0.0) {
        ++layers;
        worst_mean = std::max(worst_mean, std::abs(mean(ls.S) - 1.0));
      }
      if (ls.mean_gradient > 0.0) worst_mean = std::max(worst_mean, std::abs(mean(ls.G) - 1.0));
    }
    for (double scale : {1e-3, 1.0, 1e3}) {
      const auto got = scores_on(c.model, c.input, c.loss, scale);
      for (std::size_t L = 0; L < ref.size(); ++L)
        for (std::size_t k = 0; k < ref[L].G.size(); ++k)
          worst_scale = std::max(worst_scale, std::abs(got[L].G[k] - ref[L].G[k]));
    }
  }
  const bool ok = worst_mean <= 1e-9 && worst_scale <= 1e-9;
  return {ok, std::to_string(nets) + " nets, " + std::to_string(layers) + " scored layers; max |mean-1| " +
                  num(worst_mean, 3) + ", max G drift under loss scaling " + num(worst_scale, 3)};
}

// ---- 4 ---------------------------------------------------------------------

Outcome function_preservation() {
  Rng rng(44);
  struct Kind {
    std::string label;
    Family family;
    bool layernorm;
  };
  const std::vector<Kind> kinds = {{"mlp", Family::mlp, false}, {"mlp+ln", Family::mlp, true}, {"bro", Family::bro, true}};
  int scenarios = 0, preserved = 0, resets = 0, ln_resets = 0;
  std::string first_break;
  for (int t = 0; t < 30; ++t) {
    const Kind& k = kinds[static_cast<std::size_t>(t) % kinds.size()];
    ArchSpec spec;
    spec.family = k.family;
    spec.layernorm = k.layernorm;
    spec.input_dim = 4;
    spec.output_dim = 3;
    spec.hidden = 6;
    spec.depth = 2;
    Rng br = rng.split(static_cast<std::uint64_t>(t));
    Model m = build(spec, br);
    for (auto& n : m.nodes())
      if (n.kind == NodeKind::linear)
        for (auto& b : n.bias.value.data()) b -= 0.5;
    const Tensor probe = oracle::random_batch(8, 4, rng);
    const auto loss = oracle::random_loss(8, 3, rng);
    const auto scores = scores_on(m, probe, loss);

    // Threshold at the lowest eligible G, so exactly the least active
    // site(s) are reset.
    ResetPolicy policy;
    policy.metric = Metric::grama;
    policy.tau = 1e300;
    for (const auto& ls : scores)
      if (ls.kind == SiteKind::post_activation || policy.layernorm_enabled())
        for (double g : ls.G) policy.tau = std::min(policy.tau, g);
    const Tensor before = m.forward(probe);
    GraceTable grace;
    Rng reset_rng = rng.split(1000 + static_cast<std::uint64_t>(t));
    const auto events = apply_policy(m, scores, policy, 0, reset_rng, grace);
    const Tensor after = m.forward(probe);
    ++scenarios;
    resets += static_cast<int>(events.size());
    for (const auto& e : events) ln_resets += e.site.kind == SiteKind::layernorm_feature;
    if (bitwise_equal(before, after)) {
      ++preserved;
    } else if (first_break.empty()) {
      double diff = 0.0;
      for (std::size_t i = 0; i < before.size(); ++i) diff = std::max(diff, std::abs(before[i] - after[i]));
      first_break = k.label + " scenario " + std::to_string(t) + " resetting " +
                    (events.empty() ? std::string("nothing") : to_string(events.front().site)) +
                    " changes outputs by up to " + num(diff, 3);
    }
  }
  std::string detail = std::to_string(preserved) + "/" + std::to_string(scenarios) + " scenarios bitwise identical (" +
                       std::to_string(resets) + " resets, " + std::to_string(ln_resets) + " layernorm-feature)";
  if (!first_break.empty()) detail += "; first break: " + first_break;
  return {preserved == scenarios && ln_resets > 0, detail};
}

// ---- 5 ---------------------------------------------------------------------

Outcome fusion_hides_dead_branch() {
  auto c = cases::two_branch();
  const Tensor& y = c.model.forward(c.input);
  const auto taps = c.model.backward(Tensor(y.shape(), 1.0));
  for (const auto& branch : taps) {
    if (branch.site.layer != c.branch_act) continue;
    for (const auto& fused : taps) {
      if (fused.site.layer != c.fused_act || fused.site.unit != branch.site.unit) continue;
      if (std::abs(fused.activation) >= 0.1 && branch.gradient == 0.0)
        return {true, "unit " + std::to_string(branch.site.unit) + ": post-fusion |activation| " + num(fused.activation) +
                          ", in-branch tap gradient exactly 0"};
    }
  }
  return {false, "no unit with post-fusion |activation| >= 0.1 and zero in-branch tap gradient"};
}

// ---- 6 ---------------------------------------------------------------------

struct Medians {
  std::vector<double> final_acc, peak, ratio;
};

Medians continual_medians(const ExperimentConfig& c, const std::vector<std::uint64_t>& seeds) {
  Medians m;
  for (auto seed : seeds) {
    const auto r = run_seed(c, seed);
    m.final_acc.push_back(r.scalars["final_accuracy"].get<double>());
    m.peak.push_back(r.scalars["peak_accuracy_first_phase"].get<double>());
    m.ratio.push_back(r.scalars["final_inactive_ratio_grama"].get<double>());
  }
  return m;
}

Outcome continual_reproduction(const fs::path& configs) {
  const std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  const auto vanilla = continual_medians(load_config(configs / "continual_vanilla.json"), seeds);
  const auto regrama = continual_medians(load_config(configs / "continual_regrama.json"), seeds);
  const double v_final = median(vanilla.final_acc), v_peak = median(vanilla.peak);
  const double g_final = median(regrama.final_acc);
  const double v_ratio = median(vanilla.ratio), g_ratio = median(regrama.ratio);
  const bool a = v_peak - v_final >= 0.05;
  const bool b = g_final >= v_final;
  const bool c = g_ratio <= v_ratio;
  return {a && b && c, std::string("(a) ") + (a ? "ok" : "FAIL") + " vanilla peak " + num(v_peak, 4) + " final " +
                           num(v_final, 4) + "; (b) " + (b ? "ok" : "FAIL") + " regrama final " + num(g_final, 4) +
                           "; (c) " + (c ? "ok" : "FAIL") + " inactive ratio regrama " + num(g_ratio, 4) + " vs vanilla " +
                           num(v_ratio, 4)};
}

// ---- 7 ---------------------------------------------------------------------

Outcome controlled_ratio(const fs::path& configs) {
  ExperimentConfig c = load_config(configs / "ratio_study.json");
  c.task.fractions = {0.0, 0.1, 0.25, 0.5};
  std::vector<SeedResult> results;
  for (std::uint64_t seed : {0, 1, 2}) results.push_back(run_seed(c, seed));
  const json s = build_summary(c, results);
  const double rho = s["spearman_fraction_vs_median_accuracy"].get<double>();
  std::string medians;
  for (const auto& row : s["rows"])
    medians += (medians.empty() ? "" : ", ") + num(row["fraction"].get<double>(), 3) + ":" +
               num(row["final_accuracy"]["median"].get<double>(), 4);
  return {rho <= 0.0, "spearman " + num(rho, 4) + " over medians {" + medians + "}"};
}

// ---- 8 ---------------------------------------------------------------------

Outcome irreversibility(const fs::path& configs) {
  const ExperimentConfig c = load_config(configs / "continual_vanilla.json");
  const double tau = 0.0095;
  std::size_t cohort = 0, recovered = 0;
  std::string per_seed;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto trace = trace_inactive_cohort(continual_config(c, seed), seed, tau);
    const auto n = static_cast<std::size_t>(std::lround(trace.fraction_recovered(tau) * static_cast<double>(trace.sites.size())));
    cohort += trace.sites.size();
    recovered += n;
    per_seed += (per_seed.empty() ? "" : ", ") + std::to_string(n) + "/" + std::to_string(trace.sites.size());
  }
  if (cohort == 0) return {false, "no inactive site at sampling time in any seed"};
  const double frac = static_cast<double>(recovered) / static_cast<double>(cohort);
  return {frac <= 0.10, num(100.0 * frac, 4) + "% of the cohort exceeds " + num(tau) + " later (per seed " + per_seed + ")"};
}

// ---- 9 ---------------------------------------------------------------------

Outcome rl_reproduction(const fs::path& configs) {
  const std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  auto collect = [&](const std::string& file, std::vector<double>& ratio, std::vector<double>& ret) {
    const ExperimentConfig c = load_config(configs / file);
    for (auto seed : seeds) {
      const auto r = run_seed(c, seed);
      ratio.push_back(r.scalars["mean_inactive_ratio_grama"].get<double>());
      ret.push_back(r.scalars["terminal_return"].get<double>());
    }
  };
  std::vector<double> v_ratio, v_ret, g_ratio, g_ret;
  collect("rl_vanilla.json", v_ratio, v_ret);
  collect("rl_regrama.json", g_ratio, g_ret);
  const double vr = median(v_ratio), gr = median(g_ratio);
  const double vt = median(v_ret), gt = median(g_ret);
  // 5% of the vanilla return's magnitude; returns are negative costs here.
  const double floor = vt - 0.05 * std::abs(vt);
  const bool a = gr <= vr, b = gt >= floor;
  return {a && b, std::string(a ? "ok" : "FAIL") + " inactive ratio regrama " + num(gr, 4) + " vs vanilla " + num(vr, 4) +
                      "; " + (b ? "ok" : "FAIL") + " terminal return regrama " + num(gt, 5) + " vs floor " +
                      num(floor, 5) + " (vanilla " + num(vt, 5) + ")"};
}

// ---- 10 / 11 ---------------------------------------------------------------

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

int run_cli(const fs::path& cli, const fs::path& config, const fs::path& out) {
  const std::string cmd = quote(cli) + " run " + quote(config) + " --out " + quote(out) + " > /dev/null";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome tau_sweep(const fs::path& cli, const fs::path& configs, const fs::path& scratch) {
  const fs::path out = scratch / "tau_sweep";
  fs::remove_all(out);
  const auto cfg = load_config(configs / "tau_sweep.json");
  if (const int rc = run_cli(cli, configs / "tau_sweep.json", out); rc != 0)
    return {false, "plab run exited with " + std::to_string(rc)};
  const json summary = json::parse(slurp(out / "summary.json"));
  const auto& rows = summary["rows"];
  std::size_t complete = 0;
  for (const auto& row : rows) complete += row.contains("grama") && row.contains("redo");
  for (auto seed : cfg.seeds) {
    const auto t = parse_csv(slurp(out / seed_csv_name(seed)));
    if (t.rows.size() != 22) return {false, seed_csv_name(seed) + " has " + std::to_string(t.rows.size()) + " rows"};
  }
  return {rows.size() == 11 && complete == 11,
          std::to_string(rows.size()) + " summary rows, " + std::to_string(complete) + " with both metrics"};
}

Outcome determinism(const fs::path& cli, const fs::path& configs, const fs::path& scratch) {
  std::size_t files = 0;
  for (const std::string name : {"smoke_continual.json", "smoke_rl.json"}) {
    const fs::path a = scratch / ("det_a_" + name), b = scratch / ("det_b_" + name);
    fs::remove_all(a);
    fs::remove_all(b);
    if (run_cli(cli, configs / name, a) != 0 || run_cli(cli, configs / name, b) != 0)
      return {false, "plab run failed on " + name};
    for (const auto& e : fs::directory_iterator(a)) {
      const auto fname = e.path().filename();
      if (e.path().extension() != ".csv") continue;
      ++files;
      if (!fs::exists(b / fname) || slurp(e.path()) != slurp(b / fname))
        return {false, name + ": " + fname.string() + " differs between reruns"};
    }
  }
  return {files > 0, std::to_string(files) + " CSV files byte-identical across reruns"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string cli = "plab", configs = "configs", scratch = (fs::temp_directory_path() / "plab_acceptance").string();
  std::vector<int> only;
  std::string report;
  bool strict = false;
  app.add_option("--plab", cli, "Path to the plab executable");
  app.add_option("--configs", configs, "Directory holding the experiment configs");
  app.add_option("--scratch", scratch, "Directory for CLI outputs");
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--report", report, "Also write the result lines to this file");
  app.add_flag("--strict", strict, "Exit non-zero when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  const fs::path cfg(configs), tmp(scratch);
  fs::create_directories(tmp);
  const std::vector<Criterion> criteria = {
      {1, "gradient oracle", 30, gradient_oracle},
      {2, "dormant units have zero tap gradient", 10, dormant_implies_zero_gradient},
      {3, "score normalization and loss-scale invariance", 0, normalization_invariants},
      {4, "reset preserves the function", 0, function_preservation},
      {5, "fusion hides a dead branch unit", 0, fusion_hides_dead_branch},
      {6, "continual: decline, regrama recovers, fewer inactive", 300, [&] { return continual_reproduction(cfg); }},
      {7, "controlled ratio: accuracy falls with frozen fraction", 0, [&] { return controlled_ratio(cfg); }},
      {8, "inactive cohort stays inactive", 0, [&] { return irreversibility(cfg); }},
      {9, "rl: regrama keeps fewer inactive, return within 5%", 900, [&] { return rl_reproduction(cfg); }},
      {10, "tau sweep harness", 0, [&] { return tau_sweep(cli, cfg, tmp); }},
      {11, "determinism", 0, [&] { return determinism(cli, cfg, tmp); }},
  };

  std::ostringstream lines;
  int passed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit_s > 0 && secs >= c.time_limit_s) {
      o.pass = false;
      o.detail += "; took " + num(secs, 4) + " s, limit " + num(c.time_limit_s) + " s";
    }
    ++ran;
    passed += o.pass;
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << "  (" << o.detail << "; " << num(secs, 3)
         << " s)\n";
    std::cout << line.str() << std::flush;
    lines << line.str();
  }
  lines << passed << "/" << ran << " criteria passed\n";
  std::cout << passed << "/" << ran << " criteria passed" << std::endl;
  if (!report.empty()) {
    std::ofstream out(report);
    out << lines.str();
  }
  return strict && passed != ran ? 1 : 0;
}

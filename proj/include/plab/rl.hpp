#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
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

/// Point mass chasing a goal in the plane.
///
///   v <- 0.9 v + 0.1 a,  p <- clip(p + v, -2, 2),  r = -|p - goal|
///
/// Observation is (p, v, goal). Episodes last 200 steps; start position and
/// goal are uniform in [-1,1]^2, velocity starts at 0.
class PointReachEnv {
 public:
  static constexpr std::size_t obs_dim = 6;
  static constexpr std::size_t act_dim = 2;
  static constexpr int horizon = 200;

  struct StepResult {
    std::array<double, obs_dim> obs;
    double reward;
    bool done;
  };

  explicit PointReachEnv(Rng rng) : rng_(rng) {}

  std::array<double, obs_dim> reset() {
    for (auto& x : p_) x = rng_.uniform(-1.0, 1.0);
    for (auto& x : goal_) x = rng_.uniform(-1.0, 1.0);
    v_ = {0.0, 0.0};
    t_ = 0;
    return observe();
  }

  /// Sets the full state directly; the step counter restarts.
  void set_state(std::array<double, 2> p, std::array<double, 2> v, std::array<double, 2> goal) {
    p_ = p;
    v_ = v;
    goal_ = goal;
    t_ = 0;
  }

  StepResult step(std::array<double, act_dim> a) {
    for (std::size_t i = 0; i < 2; ++i) {
      const double ai = std::clamp(a[i], -1.0, 1.0);
      v_[i] = 0.9 * v_[i] + 0.1 * ai;
      p_[i] = std::clamp(p_[i] + v_[i], -2.0, 2.0);
    }
    ++t_;
    return {observe(), -std::hypot(p_[0] - goal_[0], p_[1] - goal_[1]), t_ == horizon};
  }

  [[nodiscard]] std::array<double, obs_dim> observe() const {
    return {p_[0], p_[1], v_[0], v_[1], goal_[0], goal_[1]};
  }
  [[nodiscard]] int t() const { return t_; }

 private:
  Rng rng_;
  std::array<double, 2> p_{}, v_{}, goal_{};
  int t_ = 0;
};

struct Batch {
  Tensor s, a, s2;
  std::vector<double> r;
  std::vector<double> done;
};

/// FIFO transition store; overwrites the oldest entry at capacity.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t obs_dim, std::size_t act_dim)
      : cap_(capacity), od_(obs_dim), ad_(act_dim), s_(capacity * obs_dim), a_(capacity * act_dim),
        s2_(capacity * obs_dim), r_(capacity), d_(capacity) {
    if (capacity < 1) throw Error(ErrorCode::config, "buffer capacity must be >= 1");
  }

  void add(std::span<const double> s, std::span<const double> a, double r, std::span<const double> s2, bool done) {
    std::copy(s.begin(), s.end(), s_.begin() + static_cast<std::ptrdiff_t>(cursor_ * od_));
    std::copy(a.begin(), a.end(), a_.begin() + static_cast<std::ptrdiff_t>(cursor_ * ad_));
    std::copy(s2.begin(), s2.end(), s2_.begin() + static_cast<std::ptrdiff_t>(cursor_ * od_));
    r_[cursor_] = r;
    d_[cursor_] = done ? 1.0 : 0.0;
    cursor_ = (cursor_ + 1) % cap_;
    size_ = std::min(size_ + 1, cap_);
  }

  [[nodiscard]] Batch sample(std::size_t n, Rng& rng) const {
    if (size_ == 0) throw Error(ErrorCode::not_started, "sampling from an empty buffer");
    Batch b{Tensor::matrix(static_cast<std::int64_t>(n), static_cast<std::int64_t>(od_)),
            Tensor::matrix(static_cast<std::int64_t>(n), static_cast<std::int64_t>(ad_)),
            Tensor::matrix(static_cast<std::int64_t>(n), static_cast<std::int64_t>(od_)),
            std::vector<double>(n),
            std::vector<double>(n)};
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = rng.below(size_);
      std::copy_n(s_.data() + i * od_, od_, b.s.raw() + k * od_);
      std::copy_n(a_.data() + i * ad_, ad_, b.a.raw() + k * ad_);
      std::copy_n(s2_.data() + i * od_, od_, b.s2.raw() + k * od_);
      b.r[k] = r_[i];
      b.done[k] = d_[i];
    }
    return b;
  }

  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] std::size_t capacity() const { return cap_; }
  /// Slot the next add() writes to.
  [[nodiscard]] std::size_t cursor() const { return cursor_; }
  [[nodiscard]] double reward_at(std::size_t slot) const { return r_.at(slot); }

 private:
  std::size_t cap_, od_, ad_;
  std::vector<double> s_, a_, s2_, r_, d_;
  std::size_t cursor_ = 0;
  std::size_t size_ = 0;
};

struct SacConfig {
  double gamma = 0.99;
  double polyak = 0.005;
  std::size_t batch = 64;
  double actor_lr = 3e-4;
  double critic_lr = 1e-3;
  double alpha = 0.1;
  int policy_delay = 2;
  std::int64_t learning_starts = 1000;
  std::int64_t total_steps = 100000;
  std::size_t buffer_capacity = 100000;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorCode::config, "sac.gamma must be in (0,1)");
    if (!(polyak > 0.0 && polyak <= 1.0)) throw Error(ErrorCode::config, "sac.polyak must be in (0,1]");
    if (batch < 1 || buffer_capacity < 1) throw Error(ErrorCode::config, "sac.batch and sac.buffer_capacity must be >= 1");
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw Error(ErrorCode::config, "sac learning rates must be > 0");
    if (!(alpha >= 0.0)) throw Error(ErrorCode::config, "sac.alpha must be >= 0");
    if (policy_delay < 1 || learning_starts < 1 || total_steps < 1) throw Error(ErrorCode::config, "sac step counts must be >= 1");
  }

  friend bool operator==(const SacConfig&, const SacConfig&) = default;
};

namespace squash {

inline constexpr double log_std_min = -5.0;
inline constexpr double log_std_max = 2.0;

/// Bounded log-std from the raw actor output.
inline double log_std(double raw) { return log_std_min + 0.5 * (log_std_max - log_std_min) * (std::tanh(raw) + 1.0); }
inline double dlog_std(double raw) {
  const double t = std::tanh(raw);
  return 0.5 * (log_std_max - log_std_min) * (1.0 - t * t);
}

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// log(1 - tanh(u)^2) without cancellation.
inline double log_one_minus_tanh2(double u) { return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u)); }

/// Log-density of a = tanh(u), u ~ N(mean, exp(ls)^2), in one dimension.
inline double log_prob(double mean, double ls, double a) {
  const double u = std::atanh(a);
  const double z = (u - mean) / std::exp(ls);
  return -0.5 * z * z - ls - 0.5 * std::log(2.0 * std::numbers::pi) - log_one_minus_tanh2(u);
}

}  // namespace squash

/// Reparameterized draw from the squashed Gaussian head for each row.
struct PolicySample {
  Tensor action;  // tanh(u)
  Tensor u;
  Tensor eps;
  Tensor log_std;
  std::vector<double> log_prob;
};

inline PolicySample sample_policy(const Tensor& head, std::size_t act_dim, Rng& rng) {
  const std::size_t n = head.rows();
  const auto shape = Shape{static_cast<std::int64_t>(n), static_cast<std::int64_t>(act_dim)};
  PolicySample ps{Tensor(shape, 0.0), Tensor(shape, 0.0), Tensor(shape, 0.0), Tensor(shape, 0.0),
                  std::vector<double>(n, 0.0)};
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (std::size_t b = 0; b < n; ++b) {
    double lp = 0.0;
    for (std::size_t i = 0; i < act_dim; ++i) {
      const double mean = head.at(b, i);
      const double ls = squash::log_std(head.at(b, act_dim + i));
      const double e = rng.normal();
      const double u = mean + std::exp(ls) * e;
      ps.eps.at(b, i) = e;
      ps.u.at(b, i) = u;
      ps.log_std.at(b, i) = ls;
      ps.action.at(b, i) = std::tanh(u);
      lp += -0.5 * e * e - ls - half_log_2pi - squash::log_one_minus_tanh2(u);
    }
    ps.log_prob[b] = lp;
  }
  return ps;
}

struct SacAgent {
  Model actor, critic1, critic2, target1, target2;
  Adam actor_opt, critic1_opt, critic2_opt;
  std::size_t act_dim = 0;
  std::int64_t updates = 0;
};

inline SacAgent make_agent(std::size_t obs_dim, std::size_t act_dim, const ArchSpec& arch, const SacConfig& cfg,
                           const Rng& rng) {
  auto ac = build_actor_critic(obs_dim, act_dim, arch, rng);
  SacAgent ag{std::move(ac.actor),
              std::move(ac.critic1),
              std::move(ac.critic2),
              {},
              {},
              Adam({.lr = cfg.actor_lr}),
              Adam({.lr = cfg.critic_lr}),
              Adam({.lr = cfg.critic_lr}),
              act_dim};
  ag.target1 = ag.critic1;
  ag.target2 = ag.critic2;
  ag.actor.set_want_input_grad(false);
  ag.target1.set_want_input_grad(false);
  ag.target2.set_want_input_grad(false);
  return ag;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), wa = a.cols(), wb = b.cols();
  Tensor out = Tensor::matrix(static_cast<std::int64_t>(n), static_cast<std::int64_t>(wa + wb));
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.raw() + r * wa, wa, out.raw() + r * (wa + wb));
    std::copy_n(b.raw() + r * wb, wb, out.raw() + r * (wa + wb) + wa);
  }
  return out;
}

struct UpdateResult {
  double critic_loss = 0.0;
  std::optional<double> actor_loss;
  std::vector<double> target;
  std::vector<TapRecord> critic1_taps, critic2_taps, actor_taps;
};

/// One SAC step on `batch`: both critics regress onto
///   r + gamma (1 - done) (min_j Qtarget_j(s', a') - alpha log pi(a'|s')),
/// the actor minimizes alpha log pi(a|s) - min_j Q_j(s, a) every
/// `policy_delay` updates, and the target critics move toward the online
/// ones by `polyak`. Critic loss is the mean squared TD error.
inline UpdateResult sac_update(SacAgent& ag, const Batch& batch, const SacConfig& cfg, Rng& rng) {
  const std::size_t n = batch.s.rows();
  if (n == 0) throw Error(ErrorCode::not_started, "empty batch");
  const std::size_t ad = ag.act_dim;
  UpdateResult res;

  // TD target
  const PolicySample next = sample_policy(ag.actor.forward(batch.s2), ad, rng);
  const Tensor s2a = concat_cols(batch.s2, next.action);
  const Tensor q1t = ag.target1.forward(s2a);
  const Tensor& q2t = ag.target2.forward(s2a);
  res.target.resize(n);
  for (std::size_t b = 0; b < n; ++b) {
    const double v = std::min(q1t[b], q2t[b]) - cfg.alpha * next.log_prob[b];
    res.target[b] = batch.r[b] + cfg.gamma * (1.0 - batch.done[b]) * v;
  }

  const Tensor sa = concat_cols(batch.s, batch.a);
  Tensor g = Tensor::matrix(static_cast<std::int64_t>(n), 1);
  auto critic_step = [&](Model& q, Adam& opt, std::vector<TapRecord>& taps) {
    const Tensor& out = q.forward(sa);
    double loss = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double d = out[b] - res.target[b];
      loss += d * d;
      g[b] = 2.0 * d / static_cast<double>(n);
    }
    q.set_want_input_grad(false);
    taps = q.backward(g);
    q.set_want_input_grad(true);
    opt.step(q);
    return loss / static_cast<double>(n);
  };
  res.critic_loss = 0.5 * (critic_step(ag.critic1, ag.critic1_opt, res.critic1_taps) +
                           critic_step(ag.critic2, ag.critic2_opt, res.critic2_taps));
  ++ag.updates;

  if (ag.updates % cfg.policy_delay == 0) {
    const Tensor head = ag.actor.forward(batch.s);
    const PolicySample ps = sample_policy(head, ad, rng);
    const Tensor spa = concat_cols(batch.s, ps.action);
    const Tensor q1 = ag.critic1.forward(spa);
    const Tensor q2 = ag.critic2.forward(spa);
    // dQ/da through the smaller critic of each sample; critic taps of this
    // pass are discarded
    Tensor pick1 = Tensor::matrix(static_cast<std::int64_t>(n), 1);
    Tensor pick2 = Tensor::matrix(static_cast<std::int64_t>(n), 1);
    double loss = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const bool first = q1[b] <= q2[b];
      (first ? pick1 : pick2)[b] = 1.0;
      loss += cfg.alpha * ps.log_prob[b] - std::min(q1[b], q2[b]);
    }
    res.actor_loss = loss / static_cast<double>(n);
    ag.critic1.backward(pick1);
    const Tensor dq1 = ag.critic1.input_grad();
    ag.critic2.backward(pick2);
    const Tensor& dq2 = ag.critic2.input_grad();

    const std::size_t od = batch.s.cols();
    Tensor gh(head.shape(), 0.0);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < ad; ++i) {
        const double a = ps.action.at(b, i);
        const double da = 1.0 - a * a;
        const double sigma = std::exp(ps.log_std.at(b, i));
        const double e = ps.eps.at(b, i);
        const double dq = dq1.at(b, od + i) + dq2.at(b, od + i);
        // d/dmean and d/dlog_std of alpha*logp - Q
        const double d_mean = cfg.alpha * 2.0 * a - dq * da;
        const double d_ls = cfg.alpha * (-1.0 + 2.0 * a * e * sigma) - dq * da * e * sigma;
        gh.at(b, i) = d_mean * inv;
        gh.at(b, ad + i) = d_ls * squash::dlog_std(head.at(b, ad + i)) * inv;
      }
    }
    res.actor_taps = ag.actor.backward(gh);
    ag.actor_opt.step(ag.actor);
  }

  soft_update(ag.target1, ag.critic1, cfg.polyak);
  soft_update(ag.target2, ag.critic2, cfg.polyak);
  return res;
}

struct RlConfig {
  SacConfig sac;
  ArchSpec arch;  // input/output dims are filled in from the environment
  std::optional<ResetPolicy> policy;
  double tau_grama = 0.01;
  double tau_redo = 0.02;
  std::int64_t row_every = 1000;
};

struct RlRow {
  std::int64_t step = 0;
  double episodic_return = 0.0;
  double inactive_ratio_grama = 0.0;
  double inactive_ratio_redo = 0.0;
  std::int64_t resets_cum = 0;

  friend bool operator==(const RlRow&, const RlRow&) = default;
};

struct RlTrace {
  std::vector<RlRow> rows;
  std::vector<ResetEvent> events;  // layer ids offset per network: actor, critic1, critic2

  [[nodiscard]] double mean_inactive_grama() const {
    double s = 0.0;
    for (const auto& r : rows) s += r.inactive_ratio_grama;
    return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
  }
  [[nodiscard]] double terminal_return() const { return rows.empty() ? 0.0 : rows.back().episodic_return; }
};

/// Full training loop on PointReach. Random actions until the buffer holds
/// `learning_starts` transitions, then one update per environment step.
/// Time-limit ends are stored as non-terminal. With a policy, resets run
/// every `period` steps on the actor and both online critics (never on the
/// targets). A row is emitted every `row_every` steps: mean return of the
/// episodes finished since the previous row, and inactive ratios over the
/// updates since the previous row pooled across the three networks.
inline RlTrace run_rl(RlConfig cfg, std::uint64_t seed) {
  cfg.sac.validate();
  if (cfg.policy) cfg.policy->validate();
  if (cfg.row_every < 1) throw Error(ErrorCode::config, "row_every must be >= 1");
  constexpr std::size_t od = PointReachEnv::obs_dim, ad = PointReachEnv::act_dim;
  const Rng root(seed);
  PointReachEnv env(root.split(1));
  Rng act_rng = root.split(2);
  Rng sample_rng = root.split(3);
  Rng update_rng = root.split(4);
  Rng reset_rng = root.split(5);
  SacAgent ag = make_agent(od, ad, cfg.arch, cfg.sac, root.split(6));
  ReplayBuffer buffer(cfg.sac.buffer_capacity, od, ad);

  std::array<Model*, 3> nets{&ag.actor, &ag.critic1, &ag.critic2};
  std::array<int, 3> offset{0, 0, 0};
  offset[1] = static_cast<int>(ag.actor.nodes().size());
  offset[2] = offset[1] + static_cast<int>(ag.critic1.nodes().size());
  std::array<ActivityAccumulator, 3> window, row_acc;
  std::array<GraceTable, 3> grace;
  for (std::size_t k = 0; k < 3; ++k) {
    window[k] = ActivityAccumulator(nets[k]->sites());
    row_acc[k] = ActivityAccumulator(nets[k]->sites());
  }

  RlTrace trace;
  auto obs = env.reset();
  double ep_ret = 0.0, ret_sum = 0.0, last_mean = 0.0;
  int ep_count = 0;
  Tensor obs_t = Tensor::matrix(1, od);
  std::array<double, ad> action{};

  for (std::int64_t t = 1; t <= cfg.sac.total_steps; ++t) {
    if (static_cast<std::int64_t>(buffer.size()) < cfg.sac.learning_starts) {
      for (auto& a : action) a = act_rng.uniform(-1.0, 1.0);
    } else {
      std::copy(obs.begin(), obs.end(), obs_t.raw());
      const PolicySample ps = sample_policy(ag.actor.forward(obs_t), ad, act_rng);
      for (std::size_t i = 0; i < ad; ++i) action[i] = ps.action[i];
    }
    const auto sr = env.step(action);
    buffer.add(obs, action, sr.reward, sr.obs, false);
    ep_ret += sr.reward;
    obs = sr.obs;
    if (sr.done) {
      ret_sum += ep_ret;
      ++ep_count;
      ep_ret = 0.0;
      obs = env.reset();
    }

    if (static_cast<std::int64_t>(buffer.size()) >= cfg.sac.learning_starts) {
      const Batch b = buffer.sample(cfg.sac.batch, sample_rng);
      const UpdateResult u = sac_update(ag, b, cfg.sac, update_rng);
      const std::array<const std::vector<TapRecord>*, 3> taps{&u.actor_taps, &u.critic1_taps, &u.critic2_taps};
      for (std::size_t k = 0; k < 3; ++k) {
        if (taps[k]->empty()) continue;
        window[k].accumulate(*taps[k]);
        row_acc[k].accumulate(*taps[k]);
      }
    }

    if (cfg.policy && t % cfg.policy->period == 0) {
      for (std::size_t k = 0; k < 3; ++k) {
        if (window[k].count() == 0) continue;
        auto ev = apply_policy(*nets[k], compute_scores(window[k]), *cfg.policy, t, reset_rng, grace[k]);
        for (auto& e : ev) {
          e.site.layer += offset[k];
          trace.events.push_back(e);
        }
        window[k].drain();
      }
    }

    if (t % cfg.row_every == 0) {
      RlRow row;
      row.step = t;
      if (ep_count > 0) last_mean = ret_sum / ep_count;
      row.episodic_return = last_mean;
      ret_sum = 0.0;
      ep_count = 0;
      std::size_t g_in = 0, g_tot = 0, r_in = 0, r_tot = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        if (row_acc[k].count() == 0) continue;
        const auto scores = compute_scores(row_acc[k]);
        const auto cg = classify(scores, cfg.tau_grama, Metric::grama, {.include_layernorm = true});
        const auto cr = classify(scores, cfg.tau_redo, Metric::redo, {.include_layernorm = false});
        g_in += cg.sites.size();
        g_tot += cg.total;
        r_in += cr.sites.size();
        r_tot += cr.total;
        row_acc[k].drain();
      }
      row.inactive_ratio_grama = g_tot ? static_cast<double>(g_in) / static_cast<double>(g_tot) : 0.0;
      row.inactive_ratio_redo = r_tot ? static_cast<double>(r_in) / static_cast<double>(r_tot) : 0.0;
      row.resets_cum = static_cast<std::int64_t>(trace.events.size());
      trace.rows.push_back(row);
    }
  }
  return trace;
}

}  // namespace plab

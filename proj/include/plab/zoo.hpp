#pragma once

#include <cstddef>
#include <string>
#include <tuple>

#include "plab/error.hpp"
#include "plab/net.hpp"
#include "plab/rng.hpp"

namespace plab {

enum class Family { mlp, bro };

inline std::string to_string(Family f) { return f == Family::mlp ? "mlp" : "bro"; }

struct ArchSpec {
  Family family = Family::mlp;
  std::size_t input_dim = 1;
  std::size_t output_dim = 1;
  std::size_t hidden = 32;
  int depth = 2;  // hidden layers (mlp) or BroNet blocks (bro)
  ActivationKind activation = ActivationKind::relu;
  double slope = 0.01;
  bool layernorm = false;
  int depth_multiplier = 1;

  [[nodiscard]] int effective_depth() const { return depth * depth_multiplier; }

  void validate() const {
    if (input_dim < 1 || output_dim < 1) throw Error(ErrorCode::invalid_arch, "input/output dims must be >= 1");
    if (hidden < 4) throw Error(ErrorCode::invalid_arch, "hidden width must be >= 4");
    if (depth < 1 || depth_multiplier < 1) throw Error(ErrorCode::invalid_arch, "depth and depth_multiplier must be >= 1");
    if (family == Family::bro && !layernorm) throw Error(ErrorCode::invalid_arch, "bro family requires layernorm");
  }

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// mlp: [Linear -> (LayerNorm) -> act] x depth -> Linear.
///
/// bro: Linear -> LayerNorm -> act stem, then per block
///   Linear -> LayerNorm -> act -> Linear -> LayerNorm, + block input,
/// then an output Linear. The post-residual sum has no nonlinearity, so it
/// contributes layernorm-feature sites (from the block's last LayerNorm) but
/// no post-activation site.
inline Model build(const ArchSpec& spec, Rng& rng) {
  spec.validate();
  Model m;
  int x = m.add_input(spec.input_dim);
  const int n = spec.effective_depth();
  if (spec.family == Family::mlp) {
    for (int l = 0; l < n; ++l) {
      x = m.add_linear(x, spec.hidden, rng);
      if (spec.layernorm) x = m.add_layernorm(x);
      x = m.add_activation(x, spec.activation, spec.slope);
    }
  } else {
    x = m.add_linear(x, spec.hidden, rng);
    x = m.add_layernorm(x);
    x = m.add_activation(x, spec.activation, spec.slope);
    for (int b = 0; b < n; ++b) {
      const int block_in = x;
      int y = m.add_linear(block_in, spec.hidden, rng);
      y = m.add_layernorm(y);
      y = m.add_activation(y, spec.activation, spec.slope);
      y = m.add_linear(y, spec.hidden, rng);
      y = m.add_layernorm(y);
      x = m.add_residual(y, block_in);
    }
  }
  m.add_linear(x, spec.output_dim, rng);
  return m;
}

struct ActorCritic {
  Model actor;
  Model critic1;
  Model critic2;
};

/// Actor maps state -> (mean, log-std) for each action dimension; each
/// critic maps (state ++ action) -> scalar. Networks draw from distinct
/// streams of `rng`.
inline ActorCritic build_actor_critic(std::size_t state_dim, std::size_t action_dim, ArchSpec spec, const Rng& rng) {
  if (state_dim < 1 || action_dim < 1) throw Error(ErrorCode::invalid_arch, "state and action dims must be >= 1");
  ActorCritic ac;
  ArchSpec a = spec;
  a.input_dim = state_dim;
  a.output_dim = 2 * action_dim;
  Rng ra = rng.split(1);
  ac.actor = build(a, ra);
  ArchSpec c = spec;
  c.input_dim = state_dim + action_dim;
  c.output_dim = 1;
  Rng r1 = rng.split(2), r2 = rng.split(3);
  ac.critic1 = build(c, r1);
  ac.critic2 = build(c, r2);
  return ac;
}

}  // namespace plab

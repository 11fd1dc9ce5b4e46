#include "catch_amalgamated.hpp"

#include "plab/zoo.hpp"
#include "support/oracle.hpp"

using namespace plab;

namespace {

ArchSpec bro_spec(std::size_t hidden, int depth) {
  ArchSpec s;
  s.family = Family::bro;
  s.layernorm = true;
  s.input_dim = 5;
  s.output_dim = 3;
  s.hidden = hidden;
  s.depth = depth;
  return s;
}

}  // namespace

TEST_CASE("mlp layout", "[zoo]") {
  ArchSpec s;
  s.input_dim = 3;
  s.output_dim = 2;
  s.hidden = 4;
  s.depth = 2;
  Rng rng(0);
  const Model m = build(s, rng);
  CHECK(m.sites().size() == 8);
  // in, (lin, act) x2, lin
  REQUIRE(m.nodes().size() == 6);
  CHECK(m.nodes()[1].kind == NodeKind::linear);
  CHECK(m.nodes()[2].kind == NodeKind::activation);
  CHECK(m.nodes()[5].kind == NodeKind::linear);
  CHECK(m.output_width() == 2);
  CHECK(m.parameter_count() == (3 * 4 + 4) + (4 * 4 + 4) + (4 * 2 + 2));

  s.layernorm = true;
  const Model ln = build(s, rng);
  CHECK(ln.sites().size() == 16);
  CHECK(ln.nodes()[2].kind == NodeKind::layernorm);
}

TEST_CASE("bro layout", "[zoo]") {
  Rng rng(1);
  const Model m = build(bro_spec(8, 1), rng);
  std::vector<NodeKind> kinds;
  for (const auto& n : m.nodes()) kinds.push_back(n.kind);
  using K = NodeKind;
  CHECK(kinds == std::vector<K>{K::input, K::linear, K::layernorm, K::activation, K::linear, K::layernorm,
                                K::activation, K::linear, K::layernorm, K::residual_add, K::linear});
  CHECK(m.node(9).inputs == std::vector<int>{8, 3});
  CHECK(m.sites().size() == 40);
}

TEST_CASE("depth multiplier adds whole blocks", "[zoo]") {
  Rng rng(2);
  auto one = bro_spec(8, 1);
  auto two = one;
  two.depth_multiplier = 2;
  CHECK(two.effective_depth() == 2);
  const std::size_t block = 2 * (8 * 8 + 8) + 2 * (8 + 8);
  CHECK(build(two, rng).parameter_count() - build(one, rng).parameter_count() == block);
}

TEST_CASE("zeroed block is the identity on its input", "[zoo]") {
  Rng rng(3);
  Model m = build(bro_spec(6, 1), rng);
  for (int id = 4; id <= 8; ++id) {
    for (Param* p : {&m.node(id).weight, &m.node(id).bias, &m.node(id).gain, &m.node(id).shift})
      if (p->defined()) p->value.fill(0.0);
  }
  m.forward(oracle::random_batch(4, 5, rng));
  CHECK(m.value(9) == m.value(3));
}

TEST_CASE("invalid specs", "[zoo]") {
  Rng rng(4);
  ArchSpec s;
  s.hidden = 3;
  CHECK_THROWS_AS(build(s, rng), Error);
  s = bro_spec(8, 1);
  s.layernorm = false;
  CHECK_THROWS_AS(build(s, rng), Error);
  s = {};
  s.depth = 0;
  CHECK_THROWS_AS(build(s, rng), Error);
  CHECK_THROWS_AS(build_actor_critic(0, 2, ArchSpec{}, rng), Error);
}

TEST_CASE("actor and critics", "[zoo]") {
  ArchSpec s;
  s.hidden = 32;
  Rng rng(5);
  auto ac = build_actor_critic(4, 2, s, rng);
  CHECK(ac.actor.output_width() == 4);
  CHECK(ac.actor.input_width() == 4);
  CHECK(ac.critic1.input_width() == 6);
  CHECK(ac.critic2.output_width() == 1);
  CHECK(ac.critic1.node(1).weight.value != ac.critic2.node(1).weight.value);

  auto again = build_actor_critic(4, 2, s, rng);
  CHECK(again.critic1.node(1).weight.value == ac.critic1.node(1).weight.value);
}

TEST_CASE("built models pass the gradient oracle", "[zoo][property]") {
  Rng rng(6);
  for (const auto act : {ActivationKind::relu, ActivationKind::tanh, ActivationKind::swish}) {
    for (bool bro : {false, true}) {
      ArchSpec s = bro ? bro_spec(4, 1) : ArchSpec{};
      s.input_dim = 2;
      s.output_dim = 2;
      s.hidden = 4;
      s.activation = act;
      Model m = build(s, rng);
      Tensor x;
      do {
        x = oracle::random_batch(3, 2, rng);
      } while (oracle::min_abs_preactivation(m, x) < 1e-3);
      const auto loss = oracle::random_loss(3, 2, rng);
      const auto fd = oracle::param_gradients(m, x, loss);
      const Tensor& y = m.forward(x);
      m.backward(loss.grad(y));
      auto params = m.params();
      for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t k = 0; k < params[p]->grad.size(); ++k) CHECK(oracle::close(params[p]->grad[k], fd[p][k]));
    }
  }
}

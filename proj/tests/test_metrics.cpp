#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "plab/metrics.hpp"
#include "plab/zoo.hpp"
#include "support/oracle.hpp"

using namespace plab;

namespace {

std::vector<NeuronSite> layer_sites(int layer, int n, SiteKind kind = SiteKind::post_activation) {
  std::vector<NeuronSite> s;
  for (int u = 0; u < n; ++u) s.push_back({layer, u, kind});
  return s;
}

std::vector<TapRecord> taps_of(const std::vector<NeuronSite>& sites, const std::vector<double>& a,
                               const std::vector<double>& g) {
  std::vector<TapRecord> t;
  for (std::size_t k = 0; k < sites.size(); ++k) t.push_back({sites[k], a[k], g[k]});
  return t;
}

LayerScores single_layer(const std::vector<double>& act, const std::vector<double>& grad) {
  const auto sites = layer_sites(1, static_cast<int>(act.size()));
  auto scores = compute_scores(sites, act, grad);
  REQUIRE(scores.size() == 1);
  return scores[0];
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

TEST_CASE("accumulate", "[metrics]") {
  const auto sites = layer_sites(1, 1);
  ActivityAccumulator acc(sites);
  acc.accumulate(taps_of(sites, {0.0}, {0.0}));
  acc.accumulate(taps_of(sites, {0.0}, {0.0}));
  CHECK(acc.count() == 2);
  CHECK(acc.activation_sums()[0] == 0.0);
  acc.drain();

  acc.accumulate(taps_of(sites, {2.0}, {4.0}));
  acc.accumulate(taps_of(sites, {4.0}, {8.0}));
  const auto w = acc.drain();
  CHECK(w.count == 2);
  CHECK(w.activation[0] == 3.0);
  CHECK(w.gradient[0] == 6.0);

  CHECK(acc.count() == 0);
  acc.accumulate(taps_of(sites, {1.0}, {1.0}));
  CHECK(acc.mean_activation()[0] == 1.0);

  SECTION("mismatched taps") {
    auto bad = taps_of(layer_sites(2, 1), {1.0}, {1.0});
    CHECK_THROWS_MATCHES(acc.accumulate(bad), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.code() == ErrorCode::inconsistent_sites;
                         }));
    CHECK_THROWS_AS(acc.accumulate(std::vector<TapRecord>{}), Error);
  }
}

TEST_CASE("compute_scores", "[metrics]") {
  CHECK(single_layer({1, 1, 1, 1}, {2, 2, 2, 2}).G == std::vector<double>{1, 1, 1, 1});
  const auto ls = single_layer({1, 1, 1}, {0, 1, 3});
  CHECK(ls.mean_gradient == Catch::Approx(4.0 / 3.0));
  CHECK(ls.G[0] == 0.0);
  CHECK(ls.G[1] == Catch::Approx(0.75).epsilon(1e-15));
  CHECK(ls.G[2] == Catch::Approx(2.25).epsilon(1e-15));
  CHECK(single_layer({0, 0, 0}, {1, 1, 1}).S == std::vector<double>{0, 0, 0});

  ActivityAccumulator empty(layer_sites(1, 2));
  CHECK_THROWS_AS(compute_scores(empty), Error);

  SECTION("layers split by node and site kind") {
    auto sites = layer_sites(1, 2);
    auto ln = layer_sites(1, 3, SiteKind::layernorm_feature);
    sites.insert(sites.end(), ln.begin(), ln.end());
    auto more = layer_sites(4, 2);
    sites.insert(sites.end(), more.begin(), more.end());
    std::vector<double> v(sites.size(), 1.0);
    const auto scores = compute_scores(sites, v, v);
    REQUIRE(scores.size() == 3);
    CHECK(scores[1].kind == SiteKind::layernorm_feature);
    CHECK(scores[1].units.size() == 3);
  }

  SECTION("excluded sites do not count toward the layer") {
    ActivityAccumulator acc(layer_sites(1, 3));
    acc.exclude({1, 0, SiteKind::post_activation});
    acc.accumulate(taps_of(acc.sites(), {5, 1, 3}, {5, 1, 3}));
    const auto scores = compute_scores(acc);
    CHECK(scores[0].units == std::vector<int>{1, 2});
    CHECK(scores[0].G[0] == Catch::Approx(0.5));
  }
}

TEST_CASE("classify", "[metrics]") {
  SECTION("tau zero") {
    const auto ls = single_layer({1, 1, 1, 1}, {0, 0.5, 1.5, 2.0});
    const auto c = classify(std::vector{ls}, 0.0, Metric::grama);
    REQUIRE(c.sites.size() == 1);
    CHECK(c.sites[0].unit == 0);
    CHECK(c.ratio == 0.25);
  }
  SECTION("inclusive threshold") {
    LayerScores ls;
    ls.layer = 1;
    ls.units = {0, 1, 2};
    ls.G = {0.005, 0.01, 0.02};
    ls.S = {1, 1, 1};
    const auto c = classify(std::vector{ls}, 0.01, Metric::grama);
    CHECK(c.sites.size() == 2);
    CHECK(c.sites[1].unit == 1);
  }
  SECTION("degenerate layer") {
    const auto ls = single_layer({0, 0, 0}, {0, 0, 0});
    for (double tau : {0.0, 0.01, 5.0}) {
      CHECK(classify(std::vector{ls}, tau, Metric::redo).ratio == 1.0);
      CHECK(classify(std::vector{ls}, tau, Metric::grama).ratio == 1.0);
    }
  }
  SECTION("layernorm sites can be left out") {
    std::vector<LayerScores> scores{single_layer({1, 1}, {1, 1}), single_layer({0, 0}, {0, 0})};
    scores[1].kind = SiteKind::layernorm_feature;
    CHECK(classify(scores, 0.0, Metric::grama, {.include_layernorm = false}).total == 2);
    CHECK(classify(scores, 0.0, Metric::grama).sites.size() == 2);
  }
  SECTION("negative tau") {
    const auto ls = single_layer({1}, {1});
    CHECK_THROWS_AS(classify(std::vector{ls}, -0.1, Metric::grama), Error);
    CHECK_THROWS_AS(classify(std::vector{ls}, std::nan(""), Metric::grama), Error);
  }
}

TEST_CASE("quadrants", "[metrics]") {
  SECTION("opposite rankings") {
    const auto sites = layer_sites(1, 4);
    ActivityAccumulator acc(sites);
    acc.accumulate(taps_of(sites, {1, 2, 3, 4}, {4, 3, 2, 1}));
    const auto rep = quadrants(acc);
    CHECK(rep.count(Quadrant::high_expr_low_learn) == 1);
    CHECK(rep.count(Quadrant::low_expr_high_learn) == 1);
    CHECK(rep.label[3] == Quadrant::high_expr_low_learn);
    CHECK(rep.label[0] == Quadrant::low_expr_high_learn);
  }
  SECTION("ties go to site order") {
    const auto sites = layer_sites(1, 6);
    ActivityAccumulator acc(sites);
    acc.accumulate(taps_of(sites, std::vector<double>(6, 1.0), std::vector<double>(6, 1.0)));
    const auto rep = quadrants(acc);
    CHECK(std::count(rep.top_expressive.begin(), rep.top_expressive.end(), 1) == 2);
    CHECK(std::count(rep.top_learning.begin(), rep.top_learning.end(), 1) == 2);
    CHECK(rep.top_expressive[0] == 1);
    CHECK(rep.top_expressive[1] == 1);
  }
  SECTION("aligned rankings") {
    const auto sites = layer_sites(1, 8);
    ActivityAccumulator acc(sites);
    std::vector<double> v{3, 1, 4, 1.5, 5, 9, 2, 6};
    acc.accumulate(taps_of(sites, v, v));
    const auto rep = quadrants(acc);
    CHECK(rep.count(Quadrant::high_high) == 2);
    CHECK(rep.count(Quadrant::low_low) == 6);
    CHECK(rep.label[5] == Quadrant::high_high);
    CHECK(rep.label[7] == Quadrant::high_high);
  }
  SECTION("too few sites") {
    const auto sites = layer_sites(1, 3);
    ActivityAccumulator acc(sites);
    acc.accumulate(taps_of(sites, {1, 2, 3}, {1, 2, 3}));
    CHECK_THROWS_AS(quadrants(acc), Error);
  }
}

TEST_CASE("score invariants on trained windows", "[metrics][property]") {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    auto c = oracle::random_case(i, rng);
    INFO(c.label);
    ActivityAccumulator acc(c.model.sites());
    std::vector<std::vector<TapRecord>> steps;
    for (int s = 0; s < 3; ++s) {
      const Tensor x = oracle::random_batch(4, c.model.nodes()[0].width, rng);
      const Tensor& y = c.model.forward(x);
      steps.push_back(c.model.backward(oracle::random_loss(4, y.cols(), rng).grad(y)));
      acc.accumulate(steps.back());
    }
    const auto base = compute_scores(acc);
    for (const auto& ls : base) {
      if (ls.mean_activation > 0) CHECK(std::abs(mean(ls.S) - 1.0) <= 1e-9);
      if (ls.mean_gradient > 0) CHECK(std::abs(mean(ls.G) - 1.0) <= 1e-9);
      for (double v : ls.S) CHECK(v >= 0.0);
      for (double v : ls.G) CHECK(v >= 0.0);
    }

    for (double scale : {1e-3, 1.0, 1e3}) {
      ActivityAccumulator scaled(c.model.sites());
      for (auto taps : steps) {
        for (auto& t : taps) t.gradient *= scale;
        scaled.accumulate(taps);
      }
      const auto s = compute_scores(scaled);
      for (std::size_t l = 0; l < s.size(); ++l)
        for (std::size_t k = 0; k < s[l].G.size(); ++k) CHECK(std::abs(s[l].G[k] - base[l].G[k]) <= 1e-9);
    }

    // one layer's activations scaled by c leaves that layer's S unchanged
    ActivityAccumulator act_scaled(c.model.sites());
    for (auto taps : steps) {
      for (auto& t : taps)
        if (t.site.layer == base[0].layer && t.site.kind == base[0].kind) t.activation *= 7.5;
      act_scaled.accumulate(taps);
    }
    const auto s2 = compute_scores(act_scaled);
    for (std::size_t k = 0; k < base[0].S.size(); ++k) CHECK(std::abs(s2[0].S[k] - base[0].S[k]) <= 1e-9);

    for (Metric m : {Metric::redo, Metric::grama}) {
      std::vector<NeuronSite> prev;
      for (double tau : {0.0, 0.1, 0.5, 0.9, 1.0, 2.0}) {
        const auto cl = classify(base, tau, m);
        for (const auto& p : prev) CHECK(std::find(cl.sites.begin(), cl.sites.end(), p) != cl.sites.end());
        prev = cl.sites;
      }
    }
  }
}

TEST_CASE("loss scaling end to end leaves G unchanged", "[metrics][property]") {
  Rng rng(8);
  auto c = oracle::random_case(3, rng);
  auto window = [&](double scale) {
    ActivityAccumulator acc(c.model.sites());
    const Tensor& y = c.model.forward(c.input);
    Tensor g = c.loss.grad(y);
    for (auto& v : g.data()) v *= scale;
    acc.accumulate(c.model.backward(g));
    return compute_scores(acc);
  };
  const auto base = window(1.0);
  for (double scale : {1e-3, 1e3}) {
    const auto s = window(scale);
    for (std::size_t l = 0; l < s.size(); ++l)
      for (std::size_t k = 0; k < s[l].G.size(); ++k) CHECK(std::abs(s[l].G[k] - base[l].G[k]) <= 1e-9);
  }
}

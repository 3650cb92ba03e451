#include <doctest.h>

#include <cmath>

#include "ruleforge/logic.hpp"
#include "ruleforge/trainer.hpp"

using namespace ruleforge;

namespace {

LogicNetwork tiny(std::size_t concepts, std::size_t nodes, std::size_t layers, bool skip,
                  bool negation) {
  LogicConfig c;
  c.layers = layers;
  c.nodes = nodes;
  c.skip = skip;
  c.negation = negation;
  return LogicNetwork(concepts, c);
}

// Independent scalar evaluation of the product relaxations. With binary
// arguments it is the Boolean stack itself.
std::vector<double> oracle_rules(const std::vector<double>& p, const LogicNetwork& net) {
  std::vector<double> rules;
  if (net.config().skip) rules = p;
  std::vector<double> prev = p;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    std::vector<double> in = prev;
    if (net.config().skip && l > 0) in.insert(in.end(), p.begin(), p.end());
    const auto& L = net.layers[l];
    std::vector<double> out;
    for (std::size_t i = 0; i < L.and_w.rows; ++i) {
      double a = 1.0;
      for (std::size_t j = 0; j < in.size(); ++j) a *= 1.0 - L.and_w(i, j) * (1.0 - in[j]);
      out.push_back(a);
    }
    for (std::size_t i = 0; i < L.or_w.rows; ++i) {
      double b = 1.0;
      for (std::size_t j = 0; j < in.size(); ++j) b *= 1.0 - L.or_w(i, j) * in[j];
      out.push_back(1.0 - b);
    }
    prev = out;
    if (net.config().skip)
      rules.insert(rules.end(), out.begin(), out.end());
    else
      rules = out;
  }
  return rules;
}

void randomize_binary(LogicNetwork& net, Rng& rng, double density) {
  for (auto& L : net.layers)
    for (Mat* w : {&L.and_w, &L.or_w})
      for (auto& x : w->v) x = uniform01(rng) < density ? 1.0 : 0.0;
}

}  // namespace

TEST_CASE("binarize is strict and its backward is the identity") {
  CHECK(binarize(std::vector<double>{0.7, 0.3}) == std::vector<std::uint8_t>{1, 0});
  CHECK(binarize(std::vector<double>{0.5}) == std::vector<std::uint8_t>{0});
  const std::vector<double> g = {0.25, -1.5, 3e-9};
  CHECK(binarize_backward(g) == g);
}

TEST_CASE("predicate augmentation") {
  const std::vector<std::uint8_t> c = {1, 0, 1};
  CHECK(augment_predicates(c) == std::vector<double>{1, 0, 1, 0, 1, 0});
  CHECK(augment_predicates(c, false) == std::vector<double>{1, 0, 1});
}

TEST_CASE("discrete AND/OR examples and vacuous nodes") {
  LogicNetwork net = tiny(3, 3, 1, false, false);
  net.layers[0].and_w = Mat(3, 3);
  net.layers[0].and_w(0, 0) = net.layers[0].and_w(0, 1) = 1;
  net.layers[0].and_w(1, 0) = net.layers[0].and_w(1, 2) = 1;
  net.layers[0].or_w = Mat(3, 3);
  const auto r = forward_discrete(std::vector<double>{1, 1, 0}, net);
  CHECK(r.layers[0][0] == 1);
  CHECK(r.layers[0][1] == 0);
  CHECK(r.layers[0][2] == 1);  // empty AND row
  CHECK(r.layers[0][3] == 0);  // empty OR row
}

TEST_CASE("soft AND/OR by hand") {
  LogicNetwork net = tiny(2, 1, 1, false, false);
  net.layers[0].and_w = Mat(1, 2, 1.0);
  net.layers[0].or_w = Mat(1, 2, 1.0);
  const auto t = forward_soft(std::vector<double>{0.5, 0.5}, net);
  CHECK(t.rules[0] == doctest::Approx(0.25));
  CHECK(t.rules[1] == doctest::Approx(0.75));

  LogicNetwork one = tiny(1, 1, 1, false, false);
  one.layers[0].and_w = Mat(1, 1, 0.5);
  one.layers[0].or_w = Mat(1, 1, 0.0);
  CHECK(forward_soft(std::vector<double>{0.0}, one).rules[0] == doctest::Approx(0.5));
}

TEST_CASE("rule width arithmetic") {
  for (auto [n, r] : {std::pair{64, 390}, {128, 646}, {256, 1158}, {512, 2182}})
    CHECK(tiny(67, n, 2, true, true).rule_width() == static_cast<std::size_t>(r));
  const auto net = tiny(67, 128, 2, true, true);
  CHECK(net.rule_offset(0) == 134);
  CHECK(net.rule_offset(1) == 390);
  CHECK(net.input_width(0) == 134);
  CHECK(net.input_width(1) == 256 + 134);
  CHECK(tiny(5, 4, 2, false, true).rule_width() == 8);
}

TEST_CASE("soft stack equals discrete stack on every binary input") {
  auto rng = make_rng(0, "test.boolean");
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t C = 1 + trial % 5;  // P = 2C <= 10
    LogicNetwork net = tiny(C, 1 + trial % 4, 2, trial % 3 != 0, true);
    randomize_binary(net, rng, 0.3);
    const CompiledLogic compiled = compile_discrete(net);
    for (std::size_t mask = 0; mask < (std::size_t{1} << C); ++mask) {
      std::vector<std::uint8_t> c(C);
      for (std::size_t i = 0; i < C; ++i) c[i] = (mask >> i) & 1;
      const auto p = augment_predicates(c);
      const auto soft = forward_soft(p, net).rules;
      const auto hard = forward_discrete(p, compiled).rules;
      const auto ref = oracle_rules(p, net);
      REQUIRE(soft.size() == hard.size());
      for (std::size_t j = 0; j < soft.size(); ++j) {
        CHECK(soft[j] == static_cast<double>(hard[j]));
        CHECK(ref[j] == soft[j]);
      }
    }
  }
}

TEST_CASE("compiled masks handle inputs wider than one word") {
  auto rng = make_rng(4, "test.wide");
  LogicNetwork net = tiny(45, 20, 2, true, true);
  randomize_binary(net, rng, 0.03);
  for (int s = 0; s < 20; ++s) {
    std::vector<std::uint8_t> c(45);
    for (auto& b : c) b = uniform01(rng) < 0.5;
    const auto p = augment_predicates(c);
    const auto hard = forward_discrete(p, net).rules;
    const auto ref = oracle_rules(p, net);
    for (std::size_t j = 0; j < hard.size(); ++j) CHECK(static_cast<double>(hard[j]) == ref[j]);
  }
}

TEST_CASE("single AND node weight derivative: closed form and central differences") {
  auto rng = make_rng(7, "test.and_grad");
  LogicNetwork net = tiny(4, 1, 1, false, false);
  for (auto& x : net.layers[0].and_w.v) x = uniform01(rng);
  for (auto& x : net.layers[0].or_w.v) x = uniform01(rng);
  std::vector<double> p(4);
  for (auto& x : p) x = uniform01(rng);

  const auto tape = forward_soft(p, net);
  LogicNetwork grad = tiny(4, 1, 1, false, false);
  backward_grafted(std::vector<double>{1.0, 0.0}, tape, net, &grad);
  const Mat& w = net.layers[0].and_w;
  for (std::size_t j = 0; j < 4; ++j) {
    double prod = 1.0;
    for (std::size_t k = 0; k < 4; ++k)
      if (k != j) prod *= 1.0 - w(0, k) * (1.0 - p[k]);
    const double closed = -(1.0 - p[j]) * prod;
    LogicNetwork plus = net, minus = net;
    const double h = 1e-6;
    plus.layers[0].and_w(0, j) += h;
    minus.layers[0].and_w(0, j) -= h;
    const double fd = (forward_soft(p, plus).rules[0] - forward_soft(p, minus).rules[0]) / (2 * h);
    CHECK(grad.layers[0].and_w(0, j) == doctest::Approx(closed).epsilon(1e-12));
    CHECK(std::abs(grad.layers[0].and_w(0, j) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  auto rng = make_rng(8, "test.zero");
  LogicNetwork net = tiny(3, 4, 2, true, true);
  net.init_uniform(rng);
  LogicNetwork grad = tiny(3, 4, 2, true, true);
  const auto p = augment_predicates(std::vector<std::uint8_t>{1, 0, 1});
  const auto dp = backward_grafted(std::vector<double>(net.rule_width(), 0.0), forward_soft(p, net), net, &grad);
  for (double d : dp) CHECK(d == 0.0);
  for (auto& L : grad.layers)
    for (double d : L.and_w.v) CHECK(d == 0.0);
}

TEST_CASE("predicate gradients route to concepts with the negation sign") {
  const std::vector<double> dp = {1.0, 2.0, 3.0, 0.5, -1.0, 4.0};
  CHECK(predicate_grad_to_concepts(dp, 3, true) == std::vector<double>{0.5, 3.0, -1.0});
  CHECK(predicate_grad_to_concepts(std::vector<double>{1, 2, 3}, 3, false) == std::vector<double>{1, 2, 3});
}

TEST_CASE("soft logic stack gradients match central differences") {
  for (std::uint64_t s = 0; s < 5; ++s) CHECK(finite_diff_check("logic", s) < 1e-6);
}

TEST_CASE("init range, clamp, L1 and active count") {
  auto rng = make_rng(2, "test.init");
  LogicNetwork net = tiny(5, 6, 2, true, true);
  net.init_uniform(rng);
  for (auto& L : net.layers)
    for (double x : L.and_w.v) CHECK((x >= 0.4 && x <= 0.6));
  net.layers[0].and_w(0, 0) = 1.02;
  net.layers[0].or_w(0, 0) = -0.3;
  net.clamp();
  CHECK(net.layers[0].and_w(0, 0) == 1.0);
  CHECK(net.layers[0].or_w(0, 0) == 0.0);

  double sum = 0.0;
  std::size_t active = 0;
  for (auto& L : net.layers)
    for (const Mat* w : {&L.and_w, &L.or_w})
      for (double x : w->v) sum += std::abs(x), active += x > 0.5;
  CHECK(l1_penalty(net) == doctest::Approx(sum));
  CHECK(net.count_active() == active);

  LogicNetwork grad = tiny(5, 6, 2, true, true);
  add_l1_grad(grad, 0.25);
  for (auto& L : grad.layers) CHECK(L.or_w(1, 1) == 0.25);
}

#include <doctest.h>

#include <cmath>
#include <random>

#include "closenas/gate.hpp"
#include "iso.hpp"
#include "support.hpp"

using namespace closenas;

namespace {

using Row = std::vector<double>;

Row dense(const Row& x, const LinearParams<double>& l, bool relu) {
  const int in = l.weight.value.dim(0), out = l.weight.value.dim(1);
  Row y(static_cast<std::size_t>(out));
  for (int c = 0; c < out; ++c) {
    double s = l.bias.value[static_cast<std::size_t>(c)];
    for (int r = 0; r < in; ++r) s += x[static_cast<std::size_t>(r)] * l.weight.value[static_cast<std::size_t>(r * out + c)];
    y[static_cast<std::size_t>(c)] = relu ? std::max(0.0, s) : s;
  }
  return y;
}

GateModel<double> make_gate(std::uint64_t seed, int k, std::vector<int> hidden = {64, 64}, int dim = 32) {
  std::mt19937_64 rng(seed);
  GateConfig cfg;
  cfg.embedder = {dim, dim};
  cfg.hidden = std::move(hidden);
  return GateModel<double>(SearchSpaceSpec::micro(), cfg, k, rng);
}

std::vector<double> span_of(std::initializer_list<double> v) { return std::vector<double>(v); }

}  // namespace

TEST_SUITE("gate") {

TEST_CASE("assignment probabilities") {
  const auto p = assignment_probs<double>(span_of({std::log(2.0), 0.0}));
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  const auto u = assignment_probs<double>(span_of({0.0, 0.0, 0.0, 0.0}));
  for (double v : u) CHECK(v == doctest::Approx(0.25));
  CHECK(assignment_probs<double>(span_of({3.5}))[0] == 1.0);
  CHECK_THROWS_AS(assignment_probs<double>(std::vector<double>{}), std::invalid_argument);

  // Shift invariance and no overflow for large logits.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-5, 5);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> l(5), s(5);
    for (std::size_t k = 0; k < 5; ++k) {
      l[k] = d(rng);
      s[k] = l[k] + 700.0;
    }
    const auto a = assignment_probs<double>(l), b = assignment_probs<double>(s);
    double sum = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
      CHECK(a[k] >= 0.0);
      sum += a[k];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("argmax keeps the lowest index on ties") {
  CHECK(argmax_lowest<double>(span_of({1.0, 3.0, 3.0})) == 1);
  CHECK(argmax_lowest<double>(span_of({2.0, 2.0})) == 0);
  CHECK(argmax_lowest<double>(span_of({-1.0})) == 0);
}

TEST_CASE("gumbel assignment with given noise") {
  const auto a = gumbel_assignment<double>(span_of({0.0, 0.0, 0.0}), 1.0, span_of({0.1, 0.5, 0.2}));
  CHECK(a.index == 1);
  CHECK(a.hard == std::vector<double>{0, 1, 0});
  const auto t = gumbel_assignment<double>(span_of({1.0, 0.0}), 1.0, span_of({0.0, 1.0}));
  CHECK(t.index == 0);  // perturbed values tie
  CHECK(t.relaxed[0] == doctest::Approx(0.5));
  CHECK_THROWS_AS(gumbel_assignment<double>(span_of({0.0}), 0.0, span_of({0.0})), std::invalid_argument);
  CHECK_THROWS_AS(gumbel_assignment<double>(span_of({0.0, 1.0}), 1.0, span_of({0.0})), std::invalid_argument);
}

TEST_CASE("gumbel assignment invariants") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 2.0);
  int low_temp_checked = 0;
  for (int t = 0; t < 2000; ++t) {
    const int k = 1 + t % 6;
    std::vector<double> l(static_cast<std::size_t>(k));
    for (auto& v : l) v = nd(rng);
    const double tau = t % 2 ? 0.01 : 0.5 + (t % 7) * 0.3;
    const auto a = gumbel_assignment<double>(l, tau, static_cast<std::uint64_t>(t));
    double hs = 0, rs = 0, ps = 0;
    std::vector<double> perturbed(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) {
      hs += a.hard[i];
      rs += a.relaxed[i];
      ps += a.probs[i];
      CHECK(a.relaxed[i] >= 0.0);
      perturbed[i] = l[i] + a.gumbel[i];
    }
    CHECK(hs == 1.0);
    CHECK(rs == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ps == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.index == argmax_lowest<double>(perturbed));
    CHECK(a.hard[static_cast<std::size_t>(a.index)] == 1.0);

    // At low temperature the relaxed vector sits within 1e-3 of the one-hot
    // whenever the perturbed winner leads by more than tau * ln(1000 K).
    if (tau == 0.01) {
      double gap = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < perturbed.size(); ++i)
        if (static_cast<int>(i) != a.index) gap = std::min(gap, perturbed[static_cast<std::size_t>(a.index)] - perturbed[i]);
      if (gap > tau * std::log(1000.0 * k)) {
        ++low_temp_checked;
        for (std::size_t i = 0; i < l.size(); ++i) CHECK(std::abs(a.relaxed[i] - a.hard[i]) <= 1e-3);
      }
    }
  }
  CHECK(low_temp_checked > 900);
}

TEST_CASE("hard index frequencies follow the softmax") {
  const std::vector<double> l{std::log(0.5), std::log(0.3), std::log(0.2)};
  std::vector<int> counts(3, 0);
  constexpr int n = 20000;
  for (int t = 0; t < n; ++t) ++counts[static_cast<std::size_t>(gumbel_assignment<double>(l, 1.0, static_cast<std::uint64_t>(t + 77)).index)];
  for (std::size_t k = 0; k < 3; ++k) {
    const double p = std::exp(l[k]);
    CHECK(std::abs(counts[k] - n * p) < 4 * std::sqrt(n * p * (1 - p)));
  }
}

TEST_CASE("straight-through weight is exactly one with the relaxed gradient") {
  std::mt19937_64 rng(3);
  Parameter<double> lam("lam", testing::random_tensor({1, 4}, rng));
  const std::vector<double> noise{0.3, -0.2, 1.1, 0.0};
  Tape<double> t1;
  auto a = assign_on_tape(t1.parameter(lam), std::span<const double>(noise), 0.7);
  CHECK(a.weight.value()[0] == 1.0);
  lam.zero_grad();
  t1.backward(a.weight);
  const Tensor<double> st_grad = lam.grad;

  lam.zero_grad();
  Tape<double> t2;
  auto b = assign_on_tape(t2.parameter(lam), std::span<const double>(noise), 0.7);
  t2.backward(compute::select(b.relaxed, b.index));
  for (std::size_t i = 0; i < 4; ++i) CHECK(st_grad[i] == doctest::Approx(lam.grad[i]).epsilon(1e-14));
}

TEST_CASE("gate logits match a straight-line MLP") {
  auto gate = make_gate(21, 3, {16, 12}, 8);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto arch = sample_uniform(SearchSpaceSpec::micro(), s);
    Tape<double> tape;
    const auto nodes = gate.embedder().embed(tape, arch);
    const auto lam = gate.logits(arch);
    const auto edges = cell_edges(4);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      Row x;
      for (int n : {edges[e].from, edges[e].to})
        for (double v : nodes[static_cast<std::size_t>(n)].value().values()) x.push_back(v);
      auto& mlp = gate.mlp();
      for (std::size_t l = 0; l < mlp.size(); ++l) x = dense(x, mlp[l], l + 1 < mlp.size());
      REQUIRE(x.size() == 3);
      for (std::size_t k = 0; k < 3; ++k) CHECK(lam[e][k] == doctest::Approx(x[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero output layer gives zero logits and uniform probabilities") {
  auto gate = make_gate(22, 4);
  gate.mlp().back().weight.value.fill(0.0);
  gate.mlp().back().bias.value.fill(0.0);
  for (const auto& row : gate.probabilities(sample_uniform(SearchSpaceSpec::micro(), 9)))
    for (double p : row) CHECK(p == doctest::Approx(0.25));
  for (const auto& row : gate.logits(sample_uniform(SearchSpaceSpec::micro(), 9)))
    for (double l : row) CHECK(l == 0.0);
}

TEST_CASE("single-edge logits agree with the all-edge pass") {
  auto gate = make_gate(23, 3);
  const auto arch = sample_uniform(SearchSpaceSpec::micro(), 4);
  const auto all = gate.logits(arch);
  const auto edges = cell_edges(4);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    Tape<double> tape;
    const auto one = gate.gate_logits(tape, arch, edges[e]);
    for (std::size_t k = 0; k < 3; ++k) CHECK(one.value()[k] == all[e][k]);
  }
  Tape<double> tape;
  CHECK_THROWS_AS(gate.gate_logits(tape, arch, Edge{2, 1}), std::invalid_argument);
  CHECK_THROWS_AS(gate.gate_logits(tape, arch, Edge{0, 4}), std::invalid_argument);
}

TEST_CASE("isomorphic cells get identical probabilities on counterpart edges") {
  auto gate = make_gate(24, 5);
  const auto pairs = testing::isomorphic_pairs(SearchSpaceSpec::micro(), 50);
  REQUIRE(pairs.size() == 50);
  for (const auto& [a, b] : pairs) {
    const auto pi = *testing::find_isomorphism(a, b);
    const auto pa = gate.probabilities(a), pb = gate.probabilities(b);
    const auto edges = cell_edges(4);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const int i = pi[static_cast<std::size_t>(edges[e].from)], j = pi[static_cast<std::size_t>(edges[e].to)];
      if (i > j) {
        CHECK(a.op(static_cast<int>(e)) == OpKind::none);
        continue;
      }
      const auto& q = pb[static_cast<std::size_t>(edge_index(4, i, j))];
      for (std::size_t k = 0; k < q.size(); ++k) CHECK(std::abs(pa[e][k] - q[k]) <= 1e-5);
    }
  }
}

TEST_CASE("WIT output unit copies its parent") {
  for (int k = 1; k <= 4; ++k) {
    auto gate = make_gate(30 + static_cast<std::uint64_t>(k), k);
    const int parent = k - 1;
    std::vector<std::vector<std::vector<double>>> before;
    for (std::uint64_t s = 0; s < 20; ++s) before.push_back(gate.probabilities(sample_uniform(SearchSpaceSpec::micro(), s)));
    gate.add_output_unit_wit(parent);
    CHECK(gate.num_blocks() == k + 1);
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto after = gate.probabilities(sample_uniform(SearchSpaceSpec::micro(), s));
      for (std::size_t e = 0; e < after.size(); ++e) {
        const auto& p = after[e];
        CHECK(p[static_cast<std::size_t>(k)] == doctest::Approx(p[static_cast<std::size_t>(parent)]).epsilon(1e-12));
        // Ratios among existing units are unchanged.
        for (std::size_t u = 0; u + 1 < static_cast<std::size_t>(k); ++u)
          CHECK(p[u] / p[u + 1] == doctest::Approx(before[s][e][u] / before[s][e][u + 1]).epsilon(1e-10));
        if (k == 1) CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
      }
    }
  }
  auto gate = make_gate(40, 2);
  CHECK_THROWS_AS(gate.add_output_unit_wit(2), std::out_of_range);
  CHECK_THROWS_AS(gate.add_output_unit_wit(-1), std::out_of_range);
}

TEST_CASE("random output unit keeps old logits") {
  auto gate = make_gate(41, 2);
  const auto arch = sample_uniform(SearchSpaceSpec::micro(), 3);
  const auto before = gate.logits(arch);
  std::mt19937_64 rng(1);
  gate.add_output_unit_random(rng);
  const auto after = gate.logits(arch);
  for (std::size_t e = 0; e < before.size(); ++e) {
    CHECK(after[e].size() == 3);
    CHECK(after[e][0] == before[e][0]);
    CHECK(after[e][1] == before[e][1]);
  }
}

TEST_CASE("temperature validation") {
  auto gate = make_gate(42, 2);
  CHECK_THROWS_AS(gate.set_tau(0.0), std::invalid_argument);
  CHECK_THROWS_AS(gate.set_tau(-1.0), std::invalid_argument);
  gate.set_tau(0.3);
  CHECK(gate.tau() == 0.3);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(GateModel<double>(SearchSpaceSpec::micro(), GateConfig{}, 0, rng), std::invalid_argument);
}

TEST_CASE("finite-difference gradient through embedder, gate and relaxed assignment") {
  auto gate = make_gate(50, 3, {6}, 4);
  std::vector<Parameter<double>*> params;
  gate.append_parameters(params);
  const auto arch = CellArchitecture::parse(
      "conv3x3(1,2)|skip_connect(1,3)|conv3x3(1,4)|conv3x3(2,3)|none(2,4)|skip_connect(3,4)");
  std::mt19937_64 rng(6);
  std::vector<std::vector<double>> noise;
  for (int e = 0; e < 6; ++e) noise.push_back(sample_gumbel(3, rng));
  const double err = testing::gradient_error(params, [&](Tape<double>& t) {
    auto lam = gate.edge_logits(t, arch);
    Var<double> total;
    for (std::size_t e = 0; e < lam.size(); ++e) {
      auto a = assign_on_tape(lam[e], std::span<const double>(noise[e]), 0.8);
      auto term = testing::probe_loss(a.relaxed, 100 + e);
      total = e == 0 ? term : compute::add(total, term);
    }
    return total;
  });
  CHECK(err < 1e-4);
}

}  // TEST_SUITE

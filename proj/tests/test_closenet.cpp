#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "closenas/closenet.hpp"
#include "closenas/score.hpp"
#include "support.hpp"

using namespace closenas;

namespace {

SearchSpaceSpec small_spec(int base = 4, int image = 6) {
  auto spec = SearchSpaceSpec::micro();
  spec.stacking = {2, 1, base, 3, image, 4};
  return spec;
}

SupernetConfig make_config(SupernetVariant v, const SearchSpaceSpec& spec, std::uint64_t seed = 7) {
  SupernetConfig cfg;
  cfg.spec = spec;
  cfg.variant = v;
  cfg.gate.embedder = {8, 8};
  cfg.gate.hidden = {16};
  cfg.seed = seed;
  return cfg;
}

template <typename T>
std::vector<double> run(Supernet<T>& net, const CellArchitecture& a, const Tensor<T>& x) {
  Tape<T> tape(false);
  const auto y = net.forward(tape, a, x, Mode::eval);
  return {y.value().values().begin(), y.value().values().end()};
}

template <typename T>
std::vector<double> run(StandaloneNet<T>& net, const Tensor<T>& x) {
  Tape<T> tape(false);
  const auto y = net.forward(tape, x, Mode::eval);
  return {y.value().values().begin(), y.value().values().end()};
}

Tensor<float> float_input(std::uint64_t seed, int n = 4, int image = 6) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  Tensor<float> x({3, n, image, image});
  for (auto& v : x.storage()) v = d(rng);
  return x;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

const CellArchitecture kAllNone(4, std::vector<OpKind>(6, OpKind::none));

}  // namespace

TEST_SUITE("closenet") {

TEST_CASE("variant names") {
  for (auto v : {SupernetVariant::closenet, SupernetVariant::supernet1, SupernetVariant::supernet2,
                 SupernetVariant::close_s})
    CHECK(variant_from_name(variant_name(v)) == v);
  CHECK_THROWS_AS(variant_from_name("supernet3"), std::invalid_argument);
}

TEST_CASE("all-none cells leave only the stem and classifier path") {
  const auto spec = small_spec();
  const auto x = float_input(1);
  Supernet<float> cn(make_config(SupernetVariant::closenet, spec, 1));
  Supernet<float> s1(make_config(SupernetVariant::supernet1, spec, 2));
  Supernet<float> s2(make_config(SupernetVariant::supernet2, spec, 3));
  s1.backbone() = cn.backbone();
  s2.backbone() = cn.backbone();
  const auto ref = run(cn, kAllNone, x);
  CHECK(run(s1, kAllNone, x) == ref);
  CHECK(run(s2, kAllNone, x) == ref);

  // Changing every cell parameter leaves the output alone.
  for (auto& st : cn.bank()->block(0).stages) st.find(OpKind::conv3x3)->weight.value.fill(3.0f);
  CHECK(run(cn, kAllNone, x) == ref);
}

TEST_CASE("a single block behaves like the per-cell shared supernet") {
  const auto spec = small_spec();
  Supernet<float> cn(make_config(SupernetVariant::closenet, spec, 4));
  Supernet<float> s2(make_config(SupernetVariant::supernet2, spec, 5));
  s2.backbone() = cn.backbone();
  for (int s = 0; s < spec.stacking.stages; ++s) s2.vanilla_slots()[static_cast<std::size_t>(s2.vanilla_slot(s, 0, 0))] = cn.bank()->block(0).stages[static_cast<std::size_t>(s)];
  const auto x = float_input(2);
  for (std::uint64_t k = 0; k < 10; ++k) {
    const auto a = sample_uniform(spec, k);
    CHECK(run(cn, a, x) == run(s2, a, x));
  }
}

TEST_CASE("forward equals the transplanted stand-alone network") {
  const auto spec = small_spec();
  Supernet<float> net(make_config(SupernetVariant::closenet, spec, 6));
  std::mt19937_64 rng(9);
  net.add_block(0, false, rng);
  net.add_block(1, false, rng);
  const auto x = float_input(3);
  std::set<int> used;
  for (std::uint64_t k = 0; k < 30; ++k) {
    const auto a = sample_uniform(spec, k + 100);
    const auto blocks = net.assignment(a);
    used.insert(blocks.begin(), blocks.end());
    auto alone = StandaloneNet<float>::transplant(net, a, blocks);
    CHECK(max_abs_diff(run(net, a, x), run(alone, x)) <= 1e-5);
  }
  CHECK(used.size() >= 2);

  for (auto v : {SupernetVariant::supernet1, SupernetVariant::supernet2}) {
    Supernet<float> vn(make_config(v, spec, 8));
    for (std::uint64_t k = 0; k < 10; ++k) {
      const auto a = sample_uniform(spec, k);
      auto alone = StandaloneNet<float>::transplant(vn, a, vn.assignment(a));
      CHECK(max_abs_diff(run(vn, a, x), run(alone, x)) <= 1e-5);
    }
  }
}

TEST_CASE("random assignment policy uses a fixed block per edge") {
  auto cfg = make_config(SupernetVariant::closenet, small_spec(), 10);
  cfg.assignment = AssignmentPolicy::random;
  cfg.initial_blocks = 3;
  Supernet<float> net(cfg);
  CHECK(net.gate() == nullptr);
  const auto a = sample_uniform(cfg.spec, 4);
  CHECK(net.assignment(a) == net.assignment(a));
  for (int b : net.assignment(a)) CHECK((b >= 0 && b < 3));
  auto alone = StandaloneNet<float>::transplant(net, a, net.assignment(a));
  const auto x = float_input(4);
  CHECK(max_abs_diff(run(net, a, x), run(alone, x)) <= 1e-5);
}

TEST_CASE("vanilla parameter slots") {
  const auto spec = small_spec();
  Supernet<float> s1(make_config(SupernetVariant::supernet1, spec));
  Supernet<float> s2(make_config(SupernetVariant::supernet2, spec));
  // Edges (1,3) and (2,4) are indices 1 and 4.
  for (int s = 0; s < 2; ++s) {
    CHECK(s1.edge_params(s, 0, 1, OpKind::conv3x3, -1) != s1.edge_params(s, 0, 4, OpKind::conv3x3, -1));
    CHECK(s2.edge_params(s, 0, 1, OpKind::conv3x3, -1) == s2.edge_params(s, 0, 4, OpKind::conv3x3, -1));
  }
  CHECK(s1.edge_params(0, 0, 1, OpKind::skip_connect, -1) == nullptr);
  CHECK(s1.vanilla_slots().size() == 2 * 6);
  CHECK(s2.vanilla_slots().size() == 2);
  CHECK(s1.num_blocks() == 0);
  CHECK(s1.assignment(kAllNone) == std::vector<int>(6, -1));

  for (auto sp : {SearchSpaceSpec::micro(), SearchSpaceSpec::nb201_like(), spec}) {
    Supernet<float> a(make_config(SupernetVariant::supernet1, sp));
    Supernet<float> b(make_config(SupernetVariant::supernet2, sp));
    CHECK(a.parameter_count() > b.parameter_count());
  }
}

TEST_CASE("CLOSE-S block assignment") {
  for (int e = 0; e < 6; ++e) CHECK(close_s_assignment(e, 1) == 0);
  std::set<int> distinct;
  for (int e = 0; e < 6; ++e) distinct.insert(close_s_assignment(e, 2));
  CHECK(distinct == std::set<int>{0, 1, 2, 3, 4, 5});
  CHECK_THROWS_AS(close_s_assignment(0, 3), std::invalid_argument);
}

TEST_CASE("CLOSE-S second stage starts from copies of the shared block") {
  const auto spec = small_spec();
  Supernet<float> net(make_config(SupernetVariant::close_s, spec, 11));
  const auto x = float_input(5);
  std::vector<std::vector<double>> before;
  for (std::uint64_t k = 0; k < 10; ++k) before.push_back(run(net, sample_uniform(spec, k), x));
  CHECK(net.num_blocks() == 1);
  std::mt19937_64 rng(1);
  net.enter_close_s_stage2(true, rng);
  CHECK(net.close_s_stage() == 2);
  CHECK(net.num_blocks() == 6);
  CHECK(net.assignment(sample_uniform(spec, 0)) == std::vector<int>{0, 1, 2, 3, 4, 5});
  for (int k = 1; k < 6; ++k)
    CHECK(net.bank()->block(k).stages[1].find(OpKind::conv3x3)->weight.value.storage() ==
          net.bank()->block(0).stages[1].find(OpKind::conv3x3)->weight.value.storage());
  for (std::uint64_t k = 0; k < 10; ++k) CHECK(run(net, sample_uniform(spec, k), x) == before[k]);
  CHECK_THROWS_AS(net.enter_close_s_stage2(true, rng), std::logic_error);
  CHECK_THROWS_AS(net.add_block(0, true, rng), std::logic_error);
}

TEST_CASE("gate and bank disagreeing on K is an error") {
  Supernet<float> net(make_config(SupernetVariant::closenet, small_spec(), 12));
  net.gate()->add_output_unit_wit(0);
  Tape<float> tape(false);
  CHECK_THROWS_AS(net.forward(tape, sample_uniform(net.config().spec, 1), float_input(6), Mode::eval), std::logic_error);
}

TEST_CASE("train mode needs a generator and yields a straight-through weight of one") {
  Supernet<float> net(make_config(SupernetVariant::closenet, small_spec(), 13));
  const auto a = sample_uniform(net.config().spec, 2);
  Tape<float> tape;
  CHECK_THROWS_AS(net.forward(tape, a, float_input(7), Mode::train), std::invalid_argument);
}

TEST_CASE("one-shot scores") {
  DatasetConfig dc;
  dc.image_size = 6;
  dc.train_size = 10;
  dc.val_size = 1000;
  dc.teacher_width = 8;
  const auto task = make_synthetic_task(dc);
  auto spec = small_spec();
  Supernet<float> net(make_config(SupernetVariant::closenet, spec, 14));
  double mean = 0.0;
  for (std::uint64_t k = 0; k < 10; ++k) {
    const auto a = sample_uniform(spec, k);
    const double s = estimate_score(net, a, task.val, 128);
    CHECK(s == estimate_score(net, a, task.val, 128));
    CHECK((s >= 0.0 && s <= 1.0));
    mean += s / 10;
  }
  CHECK(std::abs(mean - 0.1) <= 0.05);
  CHECK_THROWS_AS(estimate_score(net, kAllNone, Dataset(3, 6, 10)), std::invalid_argument);
}

TEST_CASE("finite-difference gradient of the relaxed supernet forward") {
  auto spec = small_spec(2, 4);
  auto cfg = make_config(SupernetVariant::closenet, spec, 15);
  cfg.gate.embedder = {4, 4};
  cfg.gate.hidden = {8};
  Supernet<double> net(cfg);
  std::mt19937_64 rng(16);
  net.add_block(0, false, rng);
  const auto x = testing::random_tensor({3, 3, 4, 4}, rng);
  const auto arch = CellArchitecture::parse(
      "conv3x3(1,2)|skip_connect(1,3)|conv3x3(1,4)|none(2,3)|conv3x3(2,4)|skip_connect(3,4)");
  const auto params = net.parameters();
  const double err = testing::gradient_error(params, [&](Tape<double>& t) {
    return testing::probe_loss(net.forward(t, arch, x, Mode::eval, nullptr, GateGradient::relaxed));
  }, 1e-5);
  CHECK(err < 1e-4);
}

}  // TEST_SUITE

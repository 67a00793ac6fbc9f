#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <random>

#include "closenas/closenet.hpp"
#include "closenas/glow.hpp"
#include "support.hpp"

using namespace closenas;

namespace {

SearchSpaceSpec tiny_spec() {
  auto spec = SearchSpaceSpec::micro();
  spec.stacking = {2, 1, 4, 3, 6, 4};
  return spec;
}

std::map<std::string, compute::Shape> shapes_of(GlowBlock<double>& b) {
  std::vector<Parameter<double>*> ps;
  for (auto& s : b.stages) s.append_parameters(ps);
  std::map<std::string, compute::Shape> out;
  for (auto* p : ps) {
    // Drop the "glow/b<k>/" prefix so blocks compare by role.
    const auto name = p->name.substr(p->name.find('/', 5) + 1);
    out[name] = p->value.shape();
  }
  return out;
}

}  // namespace

TEST_SUITE("glow") {

TEST_CASE("sharing extent matches per-edge architecture counts") {
  for (const auto& spec : {SearchSpaceSpec::micro(), SearchSpaceSpec::nb201_like()}) {
    // Count, for every edge, the architectures that contain it.
    const auto space = enumerate_space(spec).cells;
    const auto edges = cell_edges(spec.num_nodes);
    double total = 0.0;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      for (const auto& a : space) {
        if (edges[e].from < a.num_nodes() && edges[e].to < a.num_nodes()) total += 1.0;
      }
    }
    for (int k = 1; k <= 5; ++k) CHECK(sharing_extent(spec, k) == doctest::Approx(total / k).epsilon(1e-15));
  }
  CHECK(sharing_extent(SearchSpaceSpec::micro(), 1) == 4374.0);
  CHECK(sharing_extent(SearchSpaceSpec::micro(), 2) == 2187.0);
  CHECK(sharing_extent(SearchSpaceSpec::nb201_like(), 1) == 93750.0);
  CHECK_THROWS_AS(sharing_extent(SearchSpaceSpec::micro(), 0), std::invalid_argument);
}

TEST_CASE("sharing extent times K is constant") {
  const double base = sharing_extent(SearchSpaceSpec::micro(), 1);
  for (int k = 2; k <= 16; ++k) CHECK(sharing_extent(SearchSpaceSpec::micro(), k) * k == doctest::Approx(base));
}

TEST_CASE("bank layout") {
  std::mt19937_64 rng(1);
  const auto spec = tiny_spec();
  GlowBank<double> bank(spec, 2, rng);
  CHECK(bank.size() == 2);
  REQUIRE(bank.block(0).stages.size() == 2);
  for (int s = 0; s < 2; ++s) {
    const int c = spec.stacking.stage_channels(s);
    auto* conv = bank.block(0).stages[static_cast<std::size_t>(s)].find(OpKind::conv3x3);
    REQUIRE(conv != nullptr);
    CHECK(conv->weight.value.shape() == compute::Shape{c, c, 3, 3});
    CHECK(bank.block(0).stages[static_cast<std::size_t>(s)].find(OpKind::skip_connect) == nullptr);
  }
  CHECK_THROWS_AS(GlowBank<double>(spec, 0, rng), std::invalid_argument);
}

TEST_CASE("WIT copies the parent bit-exactly and keeps shapes aligned") {
  std::mt19937_64 rng(2);
  GlowBank<double> bank(tiny_spec(), 1, rng);
  bank.add_block_wit(0);
  bank.add_block_random(rng);
  bank.add_block_wit(2);
  CHECK(bank.size() == 4);
  const auto ref = shapes_of(bank.block(0));
  for (int k = 1; k < 4; ++k) CHECK(shapes_of(bank.block(k)) == ref);

  auto same = [&](int a, int b) {
    std::vector<Parameter<double>*> pa, pb;
    for (auto& s : bank.block(a).stages) s.append_parameters(pa);
    for (auto& s : bank.block(b).stages) s.append_parameters(pb);
    REQUIRE(pa.size() == pb.size());
    bool eq = true;
    for (std::size_t i = 0; i < pa.size(); ++i) eq = eq && pa[i]->value.storage() == pb[i]->value.storage();
    return eq;
  };
  CHECK(same(0, 1));
  CHECK(same(2, 3));
  CHECK_FALSE(same(0, 2));

  // Deep copy: editing the child leaves the parent alone.
  bank.block(1).stages[0].find(OpKind::conv3x3)->weight.value[0] += 1.0;
  CHECK_FALSE(same(0, 1));

  std::vector<Parameter<double>*> all;
  bank.append_parameters(all);
  std::set<std::string> names;
  for (auto* p : all) names.insert(p->name);
  CHECK(names.size() == all.size());

  CHECK_THROWS_AS(bank.add_block_wit(4), std::out_of_range);
  CHECK_THROWS_AS(bank.add_block_wit(-1), std::out_of_range);
}

TEST_CASE("supernet outputs are unchanged by a WIT switch") {
  SupernetConfig cfg;
  cfg.spec = tiny_spec();
  cfg.gate.embedder = {8, 8};
  cfg.gate.hidden = {16};
  cfg.seed = 3;
  Supernet<double> net(cfg);
  std::mt19937_64 rng(4);
  const auto x = testing::random_tensor({3, 5, 6, 6}, rng);
  std::vector<CellArchitecture> archs;
  for (std::uint64_t s = 0; s < 20; ++s) archs.push_back(sample_uniform(cfg.spec, s));
  auto outputs = [&] {
    std::vector<std::vector<double>> out;
    for (const auto& a : archs) {
      Tape<double> tape(false);
      const auto y = net.forward(tape, a, x, Mode::eval);
      out.emplace_back(y.value().values().begin(), y.value().values().end());
    }
    return out;
  };
  const auto before = outputs();
  for (int parent : {0, 1, 0, 2}) {
    net.add_block(parent, true, rng);
    CHECK(outputs() == before);
  }
  CHECK(net.num_blocks() == 5);
}

TEST_CASE("interval splitting") {
  IntervalAssignment a(8);
  CHECK(a.intervals() == std::vector<Interval>{{0, 7}});
  CHECK(a.split() == 0);
  CHECK(a.intervals() == std::vector<Interval>{{0, 3}, {4, 7}});
  a.check();

  IntervalAssignment two(2);
  two.split();
  CHECK(two.intervals() == std::vector<Interval>{{0, 0}, {1, 1}});
  CHECK_THROWS_AS(two.split(), std::logic_error);
  CHECK_THROWS_AS(IntervalAssignment(0), std::invalid_argument);

  IntervalAssignment odd(5);
  odd.split();
  CHECK(odd.intervals() == std::vector<Interval>{{0, 2}, {3, 4}});
  CHECK(odd.block_of(2) == 0);
  CHECK(odd.block_of(3) == 1);
  CHECK_THROWS_AS(odd.block_of(5), std::out_of_range);
}

TEST_CASE("interval assignment stays a partition") {
  for (int n = 1; n <= 40; ++n) {
    IntervalAssignment a(n);
    for (int step = 1; step < n; ++step) {
      const auto before = a.intervals();
      std::size_t longest = 0;
      for (const auto& iv : before) longest = std::max(longest, static_cast<std::size_t>(iv.length()));
      const int chosen = a.split();
      CHECK(before[static_cast<std::size_t>(chosen)].length() == static_cast<int>(longest));
      a.check();
      std::vector<int> owner(static_cast<std::size_t>(n), -1);
      for (int p = 0; p < n; ++p) owner[static_cast<std::size_t>(p)] = a.block_of(p);
      for (int k = 0; k < a.num_blocks(); ++k) CHECK(std::count(owner.begin(), owner.end(), k) >= 1);
    }
    CHECK(a.num_blocks() == n);
    CHECK_THROWS_AS(a.split(), std::logic_error);
  }
}

TEST_CASE("split_interval grows the bank with a WIT copy") {
  std::mt19937_64 rng(5);
  GlowBank<double> bank(tiny_spec(), 1, rng);
  IntervalAssignment a(6);
  CHECK(split_interval(a, bank) == 0);
  CHECK(bank.size() == 2);
  CHECK(bank.block(1).stages[1].find(OpKind::conv3x3)->weight.value.storage() ==
        bank.block(0).stages[1].find(OpKind::conv3x3)->weight.value.storage());
  bank.add_block_random(rng);
  CHECK_THROWS_AS(split_interval(a, bank), std::invalid_argument);
}

}  // TEST_SUITE

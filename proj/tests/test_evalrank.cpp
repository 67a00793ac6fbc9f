#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "closenas/evalrank.hpp"
#include "iso.hpp"

using namespace closenas;
namespace fs = std::filesystem;

namespace {

double brute_tau(const std::vector<double>& e, const std::vector<double>& t) {
  long c = 0, d = 0;
  const std::size_t n = e.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double s = (e[i] - e[j]) * (t[i] - t[j]);
      if (s > 0) ++c;
      if (s < 0) ++d;
    }
  return static_cast<double>(c - d) / static_cast<double>(n * (n - 1));
}

// i is in the top K when fewer than K entries beat it (higher score, or equal
// score and smaller key).
std::vector<bool> brute_top(const std::vector<double>& s, const std::vector<std::string>& keys, int k) {
  std::vector<bool> in(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    int beaten = 0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] > s[i] || (s[j] == s[i] && keys[j] < keys[i])) ++beaten;
    in[i] = beaten < k;
  }
  return in;
}

double brute_precision(const std::vector<double>& e, const std::vector<double>& t, const std::vector<std::string>& keys,
                       double k_percent) {
  const int k = static_cast<int>(std::ceil(k_percent * static_cast<double>(e.size()) / 100.0 - 1e-12));
  const auto a = brute_top(e, keys, k), b = brute_top(t, keys, k);
  int both = 0;
  for (std::size_t i = 0; i < e.size(); ++i) both += a[i] && b[i];
  return static_cast<double>(both) / k;
}

const SyntheticTask& tiny_task() {
  static const SyntheticTask task = [] {
    DatasetConfig dc;
    dc.image_size = 6;
    dc.train_size = 60;
    dc.val_size = 50;
    dc.teacher_width = 8;
    return make_synthetic_task(dc);
  }();
  return task;
}

SearchSpaceSpec tiny_spec() {
  auto spec = SearchSpaceSpec::micro();
  spec.stacking = {2, 1, 4, 3, 6, 10};
  return spec;
}

OracleRecipe tiny_recipe() {
  OracleRecipe r;
  r.epochs = 2;
  r.batch_size = 16;
  return r;
}

}  // namespace

TEST_SUITE("evalrank") {

TEST_CASE("Kendall's tau examples") {
  const std::vector<double> t{1, 2, 3, 4};
  CHECK(kendalls_tau(t, t) == 1.0);
  CHECK(kendalls_tau(std::vector<double>{4, 3, 2, 1}, t) == -1.0);
  CHECK(kendalls_tau(std::vector<double>{1, 3, 2, 4}, t) == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
  CHECK(kendalls_tau(std::vector<double>{1, 1, 1, 1}, t) == 0.0);
  CHECK_THROWS_AS(kendalls_tau(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
  CHECK_THROWS_AS(kendalls_tau(std::vector<double>{1, 2}, t), std::invalid_argument);
}

TEST_CASE("tau and P@topK equal brute-force enumeration") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 11);
    // Small integer range so ties are common.
    std::uniform_int_distribution<int> d(0, trial % 2 ? 4 : 1000);
    std::vector<double> e(static_cast<std::size_t>(n)), t(static_cast<std::size_t>(n));
    std::vector<std::string> keys(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      e[static_cast<std::size_t>(i)] = d(rng);
      t[static_cast<std::size_t>(i)] = d(rng);
      keys[static_cast<std::size_t>(i)] = std::string(1, static_cast<char>('a' + i));
    }
    std::shuffle(keys.begin(), keys.end(), rng);
    CHECK(kendalls_tau(e, t) == doctest::Approx(brute_tau(e, t)).epsilon(1e-14));
    for (double k : {5.0, 10.0, 25.0, 50.0, 100.0, 33.3}) {
      REQUIRE(precision_at_topk(e, t, k, keys) == doctest::Approx(brute_precision(e, t, keys, k)).epsilon(1e-14));
    }
  }
}

TEST_CASE("tau is antisymmetric and invariant under monotone transforms") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> e(40), t(40), rev(40), mono(40);
    for (std::size_t i = 0; i < 40; ++i) {
      e[i] = nd(rng);
      t[i] = nd(rng);
      rev[i] = -e[i];
      mono[i] = std::atan(e[i]) * 3.0 + 1.0;
    }
    CHECK(kendalls_tau(rev, t) == doctest::Approx(-kendalls_tau(e, t)).epsilon(1e-14));
    CHECK(kendalls_tau(mono, t) == kendalls_tau(e, t));
    CHECK(precision_at_topk(mono, t, 10) == precision_at_topk(e, t, 10));
    std::vector<double> tm(40);
    for (std::size_t i = 0; i < 40; ++i) tm[i] = std::exp(t[i]);
    CHECK(kendalls_tau(e, tm) == kendalls_tau(e, t));
  }
}

TEST_CASE("P@topK examples") {
  std::vector<double> t(10);
  std::iota(t.begin(), t.end(), 0.0);
  std::vector<double> r(t.rbegin(), t.rend());
  for (double k : {5.0, 20.0, 50.0, 100.0}) CHECK(precision_at_topk(t, t, k) == 1.0);
  CHECK(precision_at_topk(r, t, 50) == 0.0);
  CHECK_THROWS_AS(precision_at_topk(t, t, 0), std::invalid_argument);
  CHECK_THROWS_AS(precision_at_topk(t, t, 101), std::invalid_argument);

  // Ties at the boundary resolve by key order.
  const std::vector<double> s{1, 1, 1};
  const std::vector<std::string> keys{"c", "a", "b"};
  CHECK(top_indices(s, 1, keys) == std::vector<int>{1});
  CHECK(top_indices(s, 2, keys) == std::vector<int>{1, 2});
  CHECK(top_indices(s, 2) == std::vector<int>{0, 1});
  CHECK(ranks_of(std::vector<double>{0.2, 0.9, 0.5}) == std::vector<int>{2, 0, 1});
}

TEST_CASE("random estimates: P@5% near 0.05 and |tau| small") {
  const int n = 729;
  std::mt19937_64 rng(9);
  std::vector<double> t(n);
  std::iota(t.begin(), t.end(), 0.0);
  double mean_p = 0.0;
  int small_tau = 0;
  constexpr int trials = 1000;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<double> e = t;
    std::shuffle(e.begin(), e.end(), rng);
    mean_p += precision_at_topk(e, t, 5) / trials;
    small_tau += std::abs(kendalls_tau(e, t)) < 0.15;
  }
  // K = 37; the overlap is hypergeometric with mean K/n.
  CHECK(std::abs(mean_p - 37.0 / 729.0) < 0.01);
  CHECK(small_tau >= 990);
}

TEST_CASE("ranking difference by complexity") {
  std::vector<double> t(25), cx(25);
  for (int i = 0; i < 25; ++i) {
    cx[static_cast<std::size_t>(i)] = i;
    t[static_cast<std::size_t>(i)] = 100 - i;
  }
  const auto same = rd_by_complexity(t, t, cx);
  CHECK(same.means == std::vector<double>(5, 0.0));
  CHECK(same.sizes == std::vector<int>(5, 5));

  // Most complex five archs truly hold ranks 0..4; the estimator demotes
  // them by five places and promotes the archs truly at ranks 5..9.
  std::vector<double> truth(25), est(25);
  for (int i = 0; i < 25; ++i) {
    const int true_rank = i >= 20 ? i - 20 : i + 5;
    int est_rank = true_rank;
    if (true_rank < 5) est_rank = true_rank + 5;
    else if (true_rank < 10) est_rank = true_rank - 5;
    truth[static_cast<std::size_t>(i)] = 1000 - true_rank;
    est[static_cast<std::size_t>(i)] = 1000 - est_rank;
  }
  const auto demoted = rd_by_complexity(est, truth, cx);
  CHECK(demoted.means[4] == -5.0);
  CHECK(demoted.means[0] == 5.0);
  CHECK(demoted.means[1] == 0.0);
  CHECK(demoted.max_complexity[4] == 24.0);

  std::mt19937_64 rng(10);
  for (int n = 5; n <= 60; ++n) {
    std::vector<double> e(static_cast<std::size_t>(n)), tr(static_cast<std::size_t>(n)), c(static_cast<std::size_t>(n));
    std::iota(e.begin(), e.end(), 0.0);
    tr = e;
    std::shuffle(e.begin(), e.end(), rng);
    for (auto& v : c) v = static_cast<double>(rng() % 7);
    const auto g = rd_by_complexity(e, tr, c);
    REQUIRE(g.sizes.size() == 5);
    const auto [lo, hi] = std::minmax_element(g.sizes.begin(), g.sizes.end());
    CHECK(*hi - *lo <= 1);
    CHECK(std::accumulate(g.sizes.begin(), g.sizes.end(), 0) == n);
    double weighted = 0.0;
    for (std::size_t k = 0; k < 5; ++k) weighted += g.means[k] * g.sizes[k];
    CHECK(std::abs(weighted) < 1e-9);
  }
  CHECK_THROWS_AS(rd_by_complexity(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 2, 3, 4},
                                   std::vector<double>{1, 2, 3, 4}),
                  std::invalid_argument);
}

TEST_CASE("KL divergence and assignment similarity") {
  const double eps = 1e-12;
  CHECK(kl_divergence(std::vector<double>{1 - eps, eps}, std::vector<double>{0.5, 0.5}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}) == doctest::Approx(std::log(2.0)));
  CHECK(kl_divergence(std::vector<double>{0.3, 0.7}, std::vector<double>{0.3, 0.7}) == 0.0);
  CHECK_THROWS_AS(kl_divergence(std::vector<double>{1}, std::vector<double>{0.5, 0.5}), std::invalid_argument);

  std::mt19937_64 rng(11);
  GateConfig gc;
  gc.embedder = {8, 8};
  gc.hidden = {16};
  GateModel<float> gate(SearchSpaceSpec::micro(), gc, 3, rng);
  const auto a = CellArchitecture::parse(
      "conv3x3(1,2)|skip_connect(1,3)|conv3x3(1,4)|conv3x3(2,3)|none(2,4)|skip_connect(3,4)");
  const auto b = CellArchitecture::parse(
      "conv3x3(1,2)|conv3x3(1,3)|none(1,4)|skip_connect(2,3)|conv3x3(2,4)|conv3x3(3,4)");
  CHECK(kl_assignment_similarity(a, a, gate) == 0.0);
  CHECK(kl_assignment_similarity(a, b, gate) >= 0.0);
  const CellArchitecture no_conv(4, std::vector<OpKind>(6, OpKind::skip_connect));
  CHECK_THROWS_AS(kl_assignment_similarity(a, no_conv, gate), std::invalid_argument);

  // Direct sum over conv3x3 edges paired in edge order.
  const auto pa = gate.probabilities(a), pb = gate.probabilities(b);
  double expect = 0.0;
  std::vector<int> ea, eb;
  for (int e = 0; e < 6; ++e) {
    if (a.op(e) == OpKind::conv3x3) ea.push_back(e);
    if (b.op(e) == OpKind::conv3x3) eb.push_back(e);
  }
  for (std::size_t i = 0; i < std::min(ea.size(), eb.size()); ++i) {
    const auto& p = pa[static_cast<std::size_t>(ea[i])];
    const auto& q = pb[static_cast<std::size_t>(eb[i])];
    for (std::size_t k = 0; k < 3; ++k) expect += p[k] * std::log(static_cast<double>(p[k]) / q[k]);
  }
  CHECK(kl_assignment_similarity(a, b, gate) == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("CSV quoting") {
  CHECK(csv_quote("a,b") == "\"a,b\"");
  CHECK(csv_quote("say \"hi\"") == "\"say \"\"hi\"\"\"");
  for (const char* f : {"plain", "conv3x3(1,2)|none(1,3)", "", "\"\""})
    CHECK(split_csv_row(csv_quote(f) + "," + csv_quote(f)) == std::vector<std::string>{f, f});
  CHECK(split_csv_row("\"a,b\",0.5,\"x\"\"y\"") == std::vector<std::string>{"a,b", "0.5", "x\"y"});
  CHECK(split_csv_row("a,,b") == std::vector<std::string>{"a", "", "b"});
  CHECK_THROWS_AS(split_csv_row("\"open"), std::invalid_argument);
}

TEST_CASE("stand-alone oracle") {
  const auto spec = tiny_spec();
  const auto pairs = testing::isomorphic_pairs(spec, 1);
  REQUIRE(pairs.size() == 1);
  const auto [a, b] = pairs.front();
  CHECK(oracle_seed(5, a) == oracle_seed(5, b));
  CHECK(oracle_seed(5, a) != oracle_seed(6, a));

  const CellArchitecture none(4, std::vector<OpKind>(6, OpKind::none));
  const auto other = CellArchitecture::parse(
      "conv3x3(1,2)|conv3x3(1,3)|conv3x3(1,4)|conv3x3(2,3)|conv3x3(2,4)|conv3x3(3,4)");
  const std::vector<CellArchitecture> archs{a, b, none, other};
  int calls = 0;
  OracleOptions opt;
  opt.progress = [&](int done, int total) {
    ++calls;
    CHECK(done <= total);
  };
  const auto table = build_oracle_table(spec, archs, tiny_recipe(), 5, tiny_task(), "tiny", opt);
  CHECK(table.size() == 4);
  CHECK(calls == 3);  // three isomorphism classes
  for (const auto& [k, e] : table.entries) CHECK((e.score >= 0.0 && e.score <= 1.0));
  CHECK(table.score(a.to_string()) == table.score(b.to_string()));
  CHECK(std::abs(table.score(none.to_string()) - 0.1) <= 0.05);

  // Retraining the counterpart on its own reproduces the shared score.
  const double retrained = train_standalone(spec, canonical_representative(b), tiny_recipe(), oracle_seed(5, b), tiny_task());
  CHECK(retrained == table.score(b.to_string()));
  CHECK_THROWS_AS(table.score("conv3x3(1,2)"), std::out_of_range);

  const auto dir = fs::temp_directory_path() / "closenas_evalrank_test";
  fs::create_directories(dir);
  auto saved = table;
  saved.meta["note"] = "x";
  saved.save(dir / "oracle.csv");
  const auto loaded = GroundTruthTable::load(dir / "oracle.csv");
  CHECK(loaded.meta == saved.meta);
  REQUIRE(loaded.size() == saved.size());
  for (const auto& [k, e] : saved.entries) {
    CHECK(loaded.entries.at(k).score == e.score);
    CHECK(loaded.entries.at(k).seed == e.seed);
  }
  std::ofstream(dir / "bad.csv") << "arch,score\nx,1\n";
  CHECK_THROWS(GroundTruthTable::load(dir / "bad.csv"));
  CHECK_THROWS(GroundTruthTable::load(dir / "missing.csv"));
  fs::remove_all(dir);

  auto bad = tiny_recipe();
  bad.epochs = 0;
  CHECK_THROWS_AS(train_standalone(spec, a, bad, 1, tiny_task()), std::invalid_argument);
}

TEST_CASE("reports against the oracle") {
  const auto spec = tiny_spec();
  std::vector<CellArchitecture> archs;
  GroundTruthTable table;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto a = sample_uniform(spec, s);
    if (table.contains(a.to_string())) continue;
    archs.push_back(a);
    table.entries[a.to_string()] = {static_cast<double>(s % 13) / 13.0, 0};
  }
  std::vector<double> self;
  for (const auto& a : archs) self.push_back(table.score(a.to_string()));
  const auto r = make_report(archs, self, table, spec, {5, 10});
  CHECK(r.kendalls_tau == doctest::Approx(brute_tau(self, self)));
  CHECK(r.p_at_topk.at(5) == 1.0);
  CHECK(r.p_at_topk.at(10) == 1.0);
  CHECK(r.rd_by_group == std::vector<double>(5, 0.0));
  CHECK(r.n_architectures == static_cast<int>(archs.size()));
  const auto j = r.to_json();
  CHECK(j.at("p_at_topk").at("5") == 1.0);

  SupernetConfig cfg;
  cfg.spec = spec;
  cfg.gate.embedder = {8, 8};
  cfg.gate.hidden = {16};
  Supernet<float> net(cfg);
  const auto ranked = rank_all(net, archs, tiny_task().val, table, 64);
  CHECK(ranked.scores.size() == archs.size());
  for (double s : ranked.scores) CHECK((s >= 0.0 && s <= 1.0));
  CHECK(ranked.report.n_architectures == static_cast<int>(archs.size()));

  auto partial = table;
  partial.entries.erase(archs.front().to_string());
  CHECK_THROWS_AS(rank_all(net, archs, tiny_task().val, partial), std::invalid_argument);
}

}  // TEST_SUITE

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "closenas/search.hpp"

using namespace closenas;

namespace {

int edge_differences(const CellArchitecture& a, const CellArchitecture& b) {
  int d = 0;
  for (int e = 0; e < a.num_edges(); ++e) d += a.op(e) != b.op(e);
  return d;
}

// Fixed scoring: number of conv3x3 edges plus a small per-string jitter.
double frozen_fitness(const CellArchitecture& a) {
  int convs = 0;
  for (auto op : a.ops()) convs += op == OpKind::conv3x3;
  return convs + static_cast<double>(fnv1a64(a.to_string()) % 1000) / 1e4;
}

}  // namespace

TEST_SUITE("search") {

TEST_CASE("mutation changes exactly one edge") {
  const auto spec = SearchSpaceSpec::micro();
  std::mt19937_64 rng(1);
  for (int t = 0; t < 1000; ++t) {
    const auto a = sample_uniform(spec, rng);
    const auto m = mutate(a, spec, rng);
    CHECK(edge_differences(a, m) == 1);
    CHECK_NOTHROW(validate(m, spec));
  }
}

TEST_CASE("crossover mixes parents edge by edge") {
  const auto spec = SearchSpaceSpec::micro();
  std::mt19937_64 rng(2);
  for (int t = 0; t < 500; ++t) {
    const auto a = sample_uniform(spec, rng), b = sample_uniform(spec, rng);
    CHECK(crossover(a, a, rng) == a);
    const auto c = crossover(a, b, rng);
    for (int e = 0; e < c.num_edges(); ++e) CHECK((c.op(e) == a.op(e) || c.op(e) == b.op(e)));
  }
  // Each edge comes from the first parent about half the time.
  const CellArchitecture x(4, std::vector<OpKind>(6, OpKind::conv3x3));
  const CellArchitecture y(4, std::vector<OpKind>(6, OpKind::none));
  int from_x = 0;
  constexpr int n = 10000;
  for (int t = 0; t < n; ++t) from_x += crossover(x, y, rng).op(t % 6) == OpKind::conv3x3;
  CHECK(std::abs(from_x - n / 2.0) < 3 * std::sqrt(n * 0.25));
}

TEST_CASE("branch frequencies") {
  std::mt19937_64 rng(3);
  constexpr int n = 10000;
  int counts[3] = {0, 0, 0};
  for (int t = 0; t < n; ++t) ++counts[static_cast<int>(draw_branch(rng))];
  const double p[3] = {0.25, 0.25, 0.5};
  for (int k = 0; k < 3; ++k) CHECK(std::abs(counts[k] - n * p[k]) < 3 * std::sqrt(n * p[k] * (1 - p[k])));
}

TEST_CASE("evolution under a frozen fitness") {
  const auto spec = SearchSpaceSpec::micro();
  std::mt19937_64 rng(4);
  Population pop;
  while (pop.size() < 10) {
    const auto a = sample_uniform(spec, rng);
    bool dup = false;
    for (const auto& m : pop) dup = dup || m.arch == a;
    if (!dup) pop.push_back({a, frozen_fitness(a)});
  }
  double best = -1;
  for (const auto& m : pop) best = std::max(best, m.fitness);
  for (int g = 0; g < 30; ++g) {
    pop = evolve_step(pop, spec, frozen_fitness, static_cast<std::uint64_t>(g));
    REQUIRE(pop.size() == 10);
    CHECK(pop.front().fitness >= best);
    best = pop.front().fitness;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < pop.size(); ++i) {
      const auto& m = pop[i];
      CHECK(CellArchitecture::parse(m.arch.to_string()) == m.arch);
      CHECK_NOTHROW(validate(m.arch, spec));
      CHECK(m.fitness == frozen_fitness(m.arch));
      seen.insert(m.arch.to_string());
      if (i > 0) CHECK(pop[i - 1].fitness >= m.fitness);
    }
    CHECK(seen.size() == pop.size());
  }
  // Six conv3x3 edges is the optimum of this fitness.
  CHECK(std::floor(best) == 6.0);

  const auto again = evolve_step(pop, spec, frozen_fitness, 99);
  CHECK(evolve_step(pop, spec, frozen_fitness, 99).front().arch == again.front().arch);
}

TEST_CASE("true percentile lookup") {
  GroundTruthTable t;
  t.entries["a"] = {0.9, 0};
  t.entries["b"] = {0.5, 0};
  t.entries["c"] = {0.5, 0};
  t.entries["d"] = {0.1, 0};
  CHECK(true_percentile(t, "a") == 0.25);
  CHECK(true_percentile(t, "b") == 0.75);
  CHECK(true_percentile(t, "d") == 1.0);
  CHECK_THROWS(true_percentile(t, "zzz"));
}

TEST_CASE("search run records every generation") {
  DatasetConfig dc;
  dc.image_size = 6;
  dc.train_size = 64;
  dc.val_size = 40;
  dc.teacher_width = 8;
  const auto task = make_synthetic_task(dc);
  SearchConfig sc;
  sc.trainer.supernet.spec.stacking = {2, 1, 4, 3, 6, 10};
  sc.trainer.supernet.gate.embedder = {8, 8};
  sc.trainer.supernet.gate.hidden = {16};
  sc.trainer.schedule.total_epochs = 8;
  sc.trainer.schedule.iterations_per_epoch = 2;
  sc.trainer.schedule.switch_epochs = {4};
  sc.trainer.schedule.restart_epochs = {4};
  sc.trainer.batch_size = 16;
  sc.trainer.probe_size = 4;
  sc.population = 6;
  sc.epochs_per_iteration = 2;
  sc.eval_batch = 40;

  GroundTruthTable oracle;
  for (const auto& a : enumerate_space(sc.trainer.supernet.spec).cells) oracle.entries[a.to_string()] = {frozen_fitness(a) / 7.0, 0};
  const auto r = run_cars_search(sc, task, &oracle);
  // Generation 0 after the 2 warm-up epochs, then three iterations of two epochs.
  CHECK(r.history.size() == 4);
  CHECK(r.history.front().epoch == 2);
  for (std::size_t g = 0; g < r.history.size(); ++g) {
    CHECK(r.history[g].generation == static_cast<int>(g));
    REQUIRE(r.history[g].true_score.has_value());
    CHECK(r.history[g].to_json().contains("best_arch"));
  }
  CHECK(r.history.back().epoch == 8);
  CHECK(r.best.to_string() == r.history.back().best_arch);
  REQUIRE(r.true_percentile.has_value());
  CHECK(*r.true_percentile == true_percentile(oracle, r.best.to_string()));
  CHECK_NOTHROW(validate(r.best, sc.trainer.supernet.spec));

  const auto same = run_cars_search(sc, task, &oracle);
  CHECK(same.best == r.best);
  CHECK(same.fitness == r.fitness);
}

}  // TEST_SUITE

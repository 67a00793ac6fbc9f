#include "closenas/search.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "closenas/score.hpp"

namespace closenas {

Branch draw_branch(std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u < 0.25) return Branch::mutation;
  if (u < 0.5) return Branch::crossover;
  return Branch::sampling;
}

CellArchitecture mutate(const CellArchitecture& arch, const SearchSpaceSpec& spec, std::mt19937_64& rng) {
  if (spec.ops.size() < 2) throw std::invalid_argument("mutation needs at least two candidate ops");
  auto ops = arch.ops();
  const auto e = std::uniform_int_distribution<std::size_t>(0, ops.size() - 1)(rng);
  std::vector<OpKind> others;
  for (OpKind op : spec.ops) {
    if (op != ops[e]) others.push_back(op);
  }
  ops[e] = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
  return CellArchitecture(arch.num_nodes(), std::move(ops));
}

CellArchitecture crossover(const CellArchitecture& a, const CellArchitecture& b, std::mt19937_64& rng) {
  if (a.num_nodes() != b.num_nodes()) throw std::invalid_argument("crossover parents differ in size");
  std::bernoulli_distribution coin(0.5);
  auto ops = a.ops();
  for (std::size_t e = 0; e < ops.size(); ++e) {
    if (coin(rng)) ops[e] = b.ops()[e];
  }
  return CellArchitecture(a.num_nodes(), std::move(ops));
}

namespace {

void sort_population(Population& pop) {
  std::sort(pop.begin(), pop.end(), [](const Member& x, const Member& y) {
    if (x.fitness != y.fitness) return x.fitness > y.fitness;
    return x.arch.to_string() < y.arch.to_string();
  });
}

}  // namespace

Population evolve_step(const Population& pop, const SearchSpaceSpec& spec, const FitnessFn& fitness,
                       std::uint64_t seed, int offspring) {
  if (pop.empty()) throw std::invalid_argument("cannot evolve an empty population");
  const int size = static_cast<int>(pop.size());
  if (offspring < 0) offspring = size;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, size - 1);
  Population pool = pop;
  for (int i = 0; i < offspring; ++i) {
    CellArchitecture child;
    switch (draw_branch(rng)) {
      case Branch::mutation:
        child = mutate(pop[static_cast<std::size_t>(pick(rng))].arch, spec, rng);
        break;
      case Branch::crossover: {
        const auto& a = pop[static_cast<std::size_t>(pick(rng))].arch;
        const auto& b = pop[static_cast<std::size_t>(pick(rng))].arch;
        child = crossover(a, b, rng);
        break;
      }
      case Branch::sampling:
        child = sample_uniform(spec, rng);
        break;
    }
    validate(child, spec);
    pool.push_back({child, fitness(child)});
  }
  sort_population(pool);
  Population next;
  std::set<std::string> seen;
  for (const auto& m : pool) {
    if (static_cast<int>(next.size()) == size) break;
    if (seen.insert(m.arch.to_string()).second) next.push_back(m);
  }
  // Only possible when parents themselves repeat; keep the size constant.
  for (std::size_t i = 0; static_cast<int>(next.size()) < size; ++i) next.push_back(pool[i]);
  return next;
}

nlohmann::json GenerationRecord::to_json() const {
  nlohmann::json j{{"generation", generation}, {"epoch", epoch}, {"best_arch", best_arch}, {"fitness", best_fitness}};
  j["true_score"] = true_score ? nlohmann::json(*true_score) : nlohmann::json(nullptr);
  j["true_percentile"] = true_percentile ? nlohmann::json(*true_percentile) : nlohmann::json(nullptr);
  return j;
}

double true_percentile(const GroundTruthTable& oracle, const std::string& arch) {
  const double s = oracle.score(arch);
  std::size_t at_least = 0;
  for (const auto& [key, e] : oracle.entries) at_least += e.score >= s;
  return static_cast<double>(at_least) / oracle.size();
}

SearchResult run_cars_search(const SearchConfig& config, const SyntheticTask& task, const GroundTruthTable* oracle) {
  if (config.population < 1) throw std::invalid_argument("population must be >= 1");
  if (config.epochs_per_iteration < 1) throw std::invalid_argument("epochs_per_iteration must be >= 1");
  if (config.warmup_fraction < 0.0 || config.warmup_fraction >= 1.0) {
    throw std::invalid_argument("warmup_fraction must lie in [0, 1)");
  }
  CloseTrainer trainer(config.trainer, task.train);
  const auto& spec = config.trainer.supernet.spec;
  const int total = config.trainer.schedule.total_epochs;
  const int warmup = static_cast<int>(std::lround(config.warmup_fraction * total));
  while (trainer.epoch() < warmup) trainer.run_epoch();

  auto fitness = [&](const CellArchitecture& a) {
    return estimate_score(trainer.supernet(), a, task.val, config.eval_batch);
  };
  std::mt19937_64 rng(config.trainer.seed ^ 0x2545f4914f6cdd1dULL);
  Population pop;
  for (int i = 0; i < config.population; ++i) {
    const auto a = sample_uniform(spec, rng);
    pop.push_back({a, fitness(a)});
  }

  SearchResult result;
  auto record = [&](int generation) {
    GenerationRecord r;
    r.generation = generation;
    r.epoch = trainer.epoch();
    r.best_arch = pop.front().arch.to_string();
    r.best_fitness = pop.front().fitness;
    if (oracle != nullptr && oracle->contains(r.best_arch)) {
      r.true_score = oracle->score(r.best_arch);
      r.true_percentile = true_percentile(*oracle, r.best_arch);
    }
    result.history.push_back(r);
  };
  sort_population(pop);
  record(0);

  int generation = 0;
  while (!trainer.done()) {
    for (int e = 0; e < config.epochs_per_iteration && !trainer.done(); ++e) trainer.run_epoch();
    // Scores drift as the supernet trains, so survivors are re-scored.
    for (auto& m : pop) m.fitness = fitness(m.arch);
    ++generation;
    pop = evolve_step(pop, spec, fitness, rng());
    record(generation);
  }
  result.best = pop.front().arch;
  result.fitness = pop.front().fitness;
  if (oracle != nullptr && oracle->contains(result.best.to_string())) {
    result.true_score = oracle->score(result.best.to_string());
    result.true_percentile = true_percentile(*oracle, result.best.to_string());
  }
  return result;
}

}  // namespace closenas

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "closenas/evalrank.hpp"
#include "closenas/trainer.hpp"

namespace closenas {

struct Member {
  CellArchitecture arch;
  double fitness = 0.0;
};

using Population = std::vector<Member>;
using FitnessFn = std::function<double(const CellArchitecture&)>;

enum class Branch { mutation, crossover, sampling };

/// Offspring branch drawn with probabilities 0.25 / 0.25 / 0.5.
Branch draw_branch(std::mt19937_64& rng);

/// Re-draws the op of one uniformly chosen edge to a different op.
CellArchitecture mutate(const CellArchitecture& arch, const SearchSpaceSpec& spec, std::mt19937_64& rng);
/// Each edge takes its op from either parent with probability 1/2.
CellArchitecture crossover(const CellArchitecture& a, const CellArchitecture& b, std::mt19937_64& rng);

/// Produces `offspring` children, scores them, and keeps the best
/// pop.size() distinct architectures of parents and children. The result is
/// sorted by fitness (descending), ties by architecture string.
Population evolve_step(const Population& pop, const SearchSpaceSpec& spec, const FitnessFn& fitness,
                       std::uint64_t seed, int offspring = -1);

struct SearchConfig {
  TrainerConfig trainer;
  int population = 20;
  double warmup_fraction = 0.25;
  int epochs_per_iteration = 5;
  int eval_batch = 256;
};

struct GenerationRecord {
  int generation = 0;
  int epoch = 0;
  std::string best_arch;
  double best_fitness = 0.0;
  std::optional<double> true_score;
  std::optional<double> true_percentile;

  nlohmann::json to_json() const;
};

struct SearchResult {
  CellArchitecture best;
  double fitness = 0.0;
  std::vector<GenerationRecord> history;
  std::optional<double> true_score;
  /// Share of the oracle's architectures scoring at least as well (top-x fraction).
  std::optional<double> true_percentile;
};

/// Fraction of oracle entries whose score is >= that of `arch` (1/n = best).
double true_percentile(const GroundTruthTable& oracle, const std::string& arch);

/// Warm-up supernet training, then alternating supernet epochs and one
/// evolution step per iteration until the training budget is spent.
SearchResult run_cars_search(const SearchConfig& config, const SyntheticTask& task,
                             const GroundTruthTable* oracle = nullptr);

}  // namespace closenas

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "closenas/data.hpp"
#include "closenas/evalrank.hpp"
#include "closenas/search.hpp"
#include "closenas/trainer.hpp"

namespace closenas {

struct EvalConfig {
  int batch = 256;
  /// Rank every `every` epochs (0: final epoch only).
  int every = 0;
  std::vector<int> k_percents{5};
  /// Architectures probed around curriculum switches.
  int probe_archs = 20;
  int checkpoint_every = 0;  // 0: final checkpoint only
};

struct OracleConfig {
  OracleRecipe recipe;
  std::uint64_t seed = 1;
  int workers = 1;
  /// 0 trains the whole space; otherwise a uniform sample of this size.
  int sample = 0;
};

struct AblationConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<int> fixed_k{1, 2, 3, 4, 5};
  std::vector<int> added_blocks{0, 1, 2, 3, 4};
};

/// Everything a run depends on. Serialized as JSON; `output_dir` is the only
/// field excluded from the hash.
struct ExperimentConfig {
  std::string output_dir = "runs";
  std::string space = "micro";  // micro | nb201
  StackingConfig stacking;
  DatasetConfig data;
  TrainerConfig train;
  EvalConfig eval;
  OracleConfig oracle;
  int search_population = 20;
  double search_warmup_fraction = 0.25;
  int search_epochs_per_iteration = 5;
  AblationConfig ablate;

  /// Throws std::invalid_argument with the offending key.
  void validate() const;
  SearchSpaceSpec spec() const;
  SearchConfig search() const;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// 16 hex digits over the canonical JSON minus output_dir.
  std::string hash() const;
  /// Hash of the parts the ground-truth table depends on (space, data, oracle).
  std::string oracle_hash() const;
};

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON
/// when possible (numbers, booleans, arrays), otherwise taken as a string.
/// Unknown keys are rejected.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// The laptop-sized preset used by the acceptance suite.
ExperimentConfig acceptance_preset();

}  // namespace closenas

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "closenas/config.hpp"

namespace closenas {

using LogFn = std::function<void(const std::string&)>;

/// Ranking quality of the supernet at one epoch.
struct CurvePoint {
  int epoch = 0;
  int blocks = 0;
  RankingReport report;
};

/// Eval-mode scores of the probe architectures around one curriculum switch.
struct SwitchProbe {
  int epoch = 0;
  std::vector<std::string> archs;
  std::vector<double> before;
  std::vector<double> after;
  double max_abs_change() const;
};

struct TrainOutcome {
  std::vector<EpochRecord> history;
  std::vector<CurvePoint> curve;
  std::vector<SwitchProbe> switches;
  std::vector<double> final_scores;  // aligned with the ranked architectures; empty without an oracle
};

struct TrainRunOptions {
  const GroundTruthTable* oracle = nullptr;
  /// Architectures ranked against the oracle (defaults to the whole space).
  std::vector<CellArchitecture> archs;
  /// Extra epochs to rank at besides the eval cadence and the final epoch.
  std::vector<int> rank_epochs;
  std::optional<std::filesystem::path> checkpoint_dir;
  LogFn log;
};

/// Trains the configured supernet; ranks at the requested epochs when an
/// oracle is provided and probes every curriculum switch.
TrainOutcome train_and_rank(const ExperimentConfig& config, const SyntheticTask& task, const TrainRunOptions& options);

/// The generated dataset for a config (deterministic).
SyntheticTask make_task(const ExperimentConfig& config);

/// Oracle architectures for a config: the whole space, or a seeded uniform
/// sample of `oracle.sample` distinct architectures.
std::vector<CellArchitecture> oracle_architectures(const ExperimentConfig& config);

/// One labelled configuration in an ablation grid.
struct GridRow {
  std::string label;
  ExperimentConfig config;  // seed filled in per run
};

/// Grid names: wit-srt, gate, fixed-k, added-blocks, variants.
std::vector<GridRow> ablation_grid(const std::string& name, const ExperimentConfig& base);
std::vector<std::string> ablation_grid_names();

struct GridResult {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<double> kendalls_tau;  // final KD per seed
  std::vector<double> p_at_top5;
  double mean_kd() const;
  double mean_p5() const;
};

std::vector<GridResult> run_ablation(const std::string& name, const ExperimentConfig& base, const SyntheticTask& task,
                                     const GroundTruthTable& oracle, const LogFn& log = {});

nlohmann::json curve_to_json(const std::vector<CurvePoint>& curve);
nlohmann::json history_to_json(const std::vector<EpochRecord>& history);
nlohmann::json switches_to_json(const std::vector<SwitchProbe>& switches);
nlohmann::json grid_to_json(const std::vector<GridResult>& rows);

}  // namespace closenas

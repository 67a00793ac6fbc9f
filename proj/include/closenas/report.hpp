#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "closenas/experiments.hpp"

namespace closenas {

/// Run directory layout (all files carry the config hash):
///   config.json  resolved config
///   train.json   epoch history, switch probes and the in-run ranking curve
///   rank.json    ranking curve over saved checkpoints (written by `rank`)
///   scores.csv   final one-shot score per architecture, with the epoch it was taken at
///   checkpoints/epoch_NNNN.ckpt
class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::filesystem::path run_directory(const ExperimentConfig& config);
std::filesystem::path oracle_path(const ExperimentConfig& config);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

/// config.json; returns the hash it embeds.
std::string write_config_artifact(const std::filesystem::path& dir, const ExperimentConfig& config);
void write_train_artifacts(const std::filesystem::path& dir, const ExperimentConfig& config,
                           const TrainOutcome& outcome);
void write_rank_artifact(const std::filesystem::path& dir, const ExperimentConfig& config,
                         const std::vector<CurvePoint>& curve);
void write_scores(const std::filesystem::path& path, const std::string& config_hash,
                  const std::vector<CellArchitecture>& archs, const std::vector<double>& scores, int epoch);
/// Reads scores.csv; throws ReportError when its hash differs from `expected_hash`.
std::vector<std::pair<std::string, double>> read_scores(const std::filesystem::path& path,
                                                        const std::string& expected_hash);

/// Everything the report needs from one run directory, validated.
struct RunArtifacts {
  std::filesystem::path dir;
  ExperimentConfig config;
  std::string config_hash;
  std::string label;
  nlohmann::json history;   // array
  nlohmann::json switches;  // array
  std::vector<CurvePoint> curve;
  RankingReport final_report;
};

/// Loads one run directory. Refuses missing files, a missing oracle table,
/// and any artifact whose embedded hash differs from the directory's.
RunArtifacts load_run(const std::filesystem::path& dir);

/// Writes summary.json, CSV tables and SVG plots for the given runs into
/// `out`. Nothing is written unless every input validates.
void emit_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::vector<double> markers;  // dashed vertical lines (e.g. switch epochs)
  std::string comment;          // embedded as an XML comment
};

struct BarChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> categories;
  std::vector<Series> series;  // y aligned with categories
  std::string comment;
};

std::string render_svg(const LineChart& chart);
std::string render_svg(const BarChart& chart);

}  // namespace closenas

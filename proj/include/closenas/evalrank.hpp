#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "closenas/closenet.hpp"
#include "closenas/data.hpp"

namespace closenas {

/// Tau-a: (concordant - discordant) / (n (n - 1) / 2); tied pairs count as neither.
double kendalls_tau(std::span<const double> estimated, std::span<const double> truth);

/// Indices of the `count` highest scores; equal scores are ordered by `keys`
/// (ascending), or by index when no keys are given.
std::vector<int> top_indices(std::span<const double> scores, int count, std::span<const std::string> keys = {});

/// |topK(est) & topK(truth)| / K with K = ceil(k_percent * n / 100).
double precision_at_topk(std::span<const double> estimated, std::span<const double> truth, double k_percent,
                         std::span<const std::string> keys = {});

/// Rank 0 is the best (highest) score; ties broken like top_indices.
std::vector<int> ranks_of(std::span<const double> scores, std::span<const std::string> keys = {});

struct RdGroups {
  std::vector<double> means;  // mean (true rank - estimated rank), least complex group first
  std::vector<int> sizes;
  std::vector<double> max_complexity;  // upper complexity bound of each group
};

/// Architectures sorted by complexity (stable), cut into `groups` parts whose
/// sizes differ by at most one. Negative means indicate under-estimation.
RdGroups rd_by_complexity(std::span<const double> estimated, std::span<const double> truth,
                          std::span<const double> complexities, int groups = 5,
                          std::span<const std::string> keys = {});

/// Stand-alone training recipe for the ground-truth oracle.
struct OracleRecipe {
  int epochs = 10;
  int batch_size = 128;
  double lr_max = 0.05;
  double lr_min = 0.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double clip_norm = 5.0;
  double dropout = 0.1;
  int eval_batch = 256;

  std::string hash() const;
};

/// Trains one architecture from scratch and returns its validation accuracy.
/// Weights and batch order derive from `seed` only.
double train_standalone(const SearchSpaceSpec& spec, const CellArchitecture& arch, const OracleRecipe& recipe,
                        std::uint64_t seed, const SyntheticTask& task);

/// Seed used for an architecture: the master seed mixed with the hash of its
/// isomorphism-canonical form, so counterparts share a seed.
std::uint64_t oracle_seed(std::uint64_t master_seed, const CellArchitecture& arch);

/// CSV field quoting; architecture strings contain commas.
std::string csv_quote(std::string_view field);
std::vector<std::string> split_csv_row(std::string_view line);

class GroundTruthTable {
 public:
  struct Entry {
    double score = 0.0;
    std::uint64_t seed = 0;
  };

  std::map<std::string, std::string> meta;  // recipe_hash, dataset, master_seed, config_hash, ...
  std::map<std::string, Entry> entries;     // keyed by flat architecture string

  std::size_t size() const noexcept { return entries.size(); }
  bool contains(const std::string& arch) const { return entries.count(arch) > 0; }
  double score(const std::string& arch) const;

  /// CSV: "# key=value" metadata lines, then header "arch,score,seed,recipe_hash".
  void save(const std::filesystem::path& path) const;
  static GroundTruthTable load(const std::filesystem::path& path);
};

/// Raised when an oracle build hits a non-finite loss; carries what was
/// finished before the failure.
class OracleError : public std::runtime_error {
 public:
  OracleError(const std::string& what, GroundTruthTable partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const GroundTruthTable& partial() const noexcept { return partial_; }

 private:
  GroundTruthTable partial_;
};

struct OracleOptions {
  int workers = 1;
  /// Called after each trained isomorphism class (done, total); serialized.
  std::function<void(int, int)> progress;
};

/// Trains the canonical representative of every isomorphism class among
/// `archs` and copies its score to all members.
GroundTruthTable build_oracle_table(const SearchSpaceSpec& spec, const std::vector<CellArchitecture>& archs,
                                    const OracleRecipe& recipe, std::uint64_t master_seed, const SyntheticTask& task,
                                    const std::string& dataset_id, const OracleOptions& options = {});

/// Sum over paired filtered ops (edge order) of KL(P_A || P_B) of the
/// noise-free assignment distributions.
double kl_assignment_similarity(const CellArchitecture& a, const CellArchitecture& b, GateModel<float>& gate,
                                OpKind op_filter = OpKind::conv3x3);

/// KL(p || q) with natural log; terms with p = 0 contribute nothing.
double kl_divergence(std::span<const double> p, std::span<const double> q);

struct RankingReport {
  double kendalls_tau = 0.0;
  std::map<int, double> p_at_topk;  // keyed by k percent
  std::vector<double> rd_by_group;
  std::vector<int> rd_group_sizes;
  int n_architectures = 0;

  nlohmann::json to_json() const;
};

/// Compares estimates against the table; `archs` gives the alignment.
RankingReport make_report(const std::vector<CellArchitecture>& archs, std::span<const double> estimated,
                          const GroundTruthTable& truth, const SearchSpaceSpec& spec,
                          const std::vector<int>& k_percents = {5});

struct RankResult {
  std::vector<double> scores;  // aligned with the architectures passed in
  RankingReport report;
};

/// Scores every architecture with the supernet (eval mode) and reports
/// against the oracle. Throws when the oracle does not cover `archs`.
RankResult rank_all(Supernet<float>& net, const std::vector<CellArchitecture>& archs, const Dataset& val,
                    const GroundTruthTable& truth, int eval_batch = 256, const std::vector<int>& k_percents = {5});

}  // namespace closenas

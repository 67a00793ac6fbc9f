#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace closenas {

enum class OpKind : std::uint8_t { none, skip_connect, conv1x1, conv3x3, avg_pool3x3 };

std::string_view op_name(OpKind op);
OpKind op_from_name(std::string_view name);
/// Only the convolutions carry parameters.
bool op_has_params(OpKind op);
/// Weight + bias count of a parameterized op at `channels` width (0 otherwise).
std::int64_t op_param_count(OpKind op, int channels);

struct OpType {
  int id = 0;
  OpKind kind = OpKind::none;
  std::string_view name() const { return op_name(kind); }
  bool has_params() const { return op_has_params(kind); }
};

/// Directed edge between 0-based nodes, from < to. Node 0 is the cell input,
/// node N-1 the cell output.
struct Edge {
  int from = 0;
  int to = 1;
  auto operator<=>(const Edge&) const = default;
};

int edge_count(int num_nodes);
/// Every (i, j) with i < j in lexicographic order.
std::vector<Edge> cell_edges(int num_nodes);
int edge_index(int num_nodes, int from, int to);

struct StackingConfig {
  int stages = 3;
  int cells_per_stage = 2;
  int base_channels = 8;
  int input_channels = 3;
  int image_size = 16;
  int num_classes = 10;

  int stage_channels(int stage) const { return base_channels << stage; }
};

enum class SpaceKind { topological, sequential };

struct SearchSpaceSpec {
  SpaceKind kind = SpaceKind::topological;
  int num_nodes = 4;
  std::vector<OpKind> ops;
  StackingConfig stacking;
  // Sequential spaces: allowed block counts per stage and the fixed stage widths.
  std::vector<std::vector<int>> allowed_depths;
  std::vector<int> stage_widths;

  /// 4 nodes, {none, skip_connect, conv3x3}: 729 cells.
  static SearchSpaceSpec micro();
  /// 4 nodes, the five benchmark ops: 15625 cells.
  static SearchSpaceSpec nb201_like();
  /// 3 stages, depths {1, 2, 3}, fixed widths: 27 networks.
  static SearchSpaceSpec sequential_micro();

  std::vector<OpType> op_types() const;
  int op_id(OpKind op) const;
  bool contains(OpKind op) const { return op_id(op) >= 0; }
};

class CellArchitecture {
 public:
  CellArchitecture() = default;
  CellArchitecture(int num_nodes, std::vector<OpKind> edge_ops);

  int num_nodes() const noexcept { return num_nodes_; }
  int num_edges() const noexcept { return static_cast<int>(ops_.size()); }
  OpKind op(int edge) const { return ops_.at(static_cast<std::size_t>(edge)); }
  OpKind op(int from, int to) const { return op(edge_index(num_nodes_, from, to)); }
  const std::vector<OpKind>& ops() const noexcept { return ops_; }

  /// "op(1,2)|op(1,3)|...": 1-based node labels, lexicographic edge order.
  std::string to_string() const;
  static CellArchitecture parse(std::string_view text);

  auto operator<=>(const CellArchitecture&) const = default;

 private:
  int num_nodes_ = 2;
  std::vector<OpKind> ops_{OpKind::none};
};

/// Throws std::invalid_argument when `arch` does not belong to `spec`.
void validate(const CellArchitecture& arch, const SearchSpaceSpec& spec);

struct SequentialArchitecture {
  std::vector<int> stage_depths;
  std::vector<int> stage_widths;
  auto operator<=>(const SequentialArchitecture&) const = default;
};

struct SpaceEnumeration {
  std::vector<CellArchitecture> cells;
  std::vector<SequentialArchitecture> sequential;
  std::size_t count() const { return cells.size() + sequential.size(); }
};

/// Closed-form size of the space.
std::size_t space_size(const SearchSpaceSpec& spec);
/// Deterministic enumeration: mixed-radix counting over edges (last edge fastest).
SpaceEnumeration enumerate_space(const SearchSpaceSpec& spec);

CellArchitecture sample_uniform(const SearchSpaceSpec& spec, std::mt19937_64& rng);
CellArchitecture sample_uniform(const SearchSpaceSpec& spec, std::uint64_t seed);

/// Applies a relabeling of nodes (perm[old] = new, input/output fixed).
/// Returns nullopt when a connected edge would point backwards.
std::optional<CellArchitecture> relabel(const CellArchitecture& arch, const std::vector<int>& perm);
/// All node permutations that fix input and output and keep `arch` a forward DAG.
std::vector<std::vector<int>> valid_relabelings(const CellArchitecture& arch);
/// Smallest relabeling of `arch` (by op sequence).
CellArchitecture canonical_representative(const CellArchitecture& arch);
/// Equal for architectures related by an intermediate-node relabeling.
std::string canonical_form(const CellArchitecture& arch);

/// Total parameter count of all cells of the stacked network built from
/// `arch` (stem, reductions and classifier excluded).
double complexity(const CellArchitecture& arch, const SearchSpaceSpec& spec);

/// Stable 64-bit FNV-1a hash, used for seeds and config fingerprints.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace closenas

#include "closenas/archspace.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace closenas {

namespace {

constexpr std::array<std::string_view, 5> kOpNames{"none", "skip_connect", "conv1x1", "conv3x3", "avg_pool3x3"};

}  // namespace

std::string_view op_name(OpKind op) { return kOpNames.at(static_cast<std::size_t>(op)); }

OpKind op_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kOpNames.size(); ++i) {
    if (kOpNames[i] == name) return static_cast<OpKind>(i);
  }
  throw std::invalid_argument("unknown operation '" + std::string(name) + "'");
}

bool op_has_params(OpKind op) { return op == OpKind::conv1x1 || op == OpKind::conv3x3; }

std::int64_t op_param_count(OpKind op, int channels) {
  const std::int64_t c = channels;
  switch (op) {
    case OpKind::conv1x1:
      return c * c + c;
    case OpKind::conv3x3:
      return 9 * c * c + c;
    default:
      return 0;
  }
}

int edge_count(int num_nodes) { return num_nodes * (num_nodes - 1) / 2; }

std::vector<Edge> cell_edges(int num_nodes) {
  std::vector<Edge> edges;
  for (int i = 0; i < num_nodes; ++i) {
    for (int j = i + 1; j < num_nodes; ++j) edges.push_back({i, j});
  }
  return edges;
}

int edge_index(int num_nodes, int from, int to) {
  if (from < 0 || to >= num_nodes || from >= to) {
    throw std::invalid_argument("no edge (" + std::to_string(from + 1) + "," + std::to_string(to + 1) + ")");
  }
  // Edges leaving nodes 0..from-1 come first.
  return from * num_nodes - from * (from + 1) / 2 + (to - from - 1);
}

SearchSpaceSpec SearchSpaceSpec::micro() {
  SearchSpaceSpec s;
  s.num_nodes = 4;
  s.ops = {OpKind::none, OpKind::skip_connect, OpKind::conv3x3};
  return s;
}

SearchSpaceSpec SearchSpaceSpec::nb201_like() {
  SearchSpaceSpec s;
  s.num_nodes = 4;
  s.ops = {OpKind::none, OpKind::skip_connect, OpKind::conv1x1, OpKind::conv3x3, OpKind::avg_pool3x3};
  return s;
}

SearchSpaceSpec SearchSpaceSpec::sequential_micro() {
  SearchSpaceSpec s;
  s.kind = SpaceKind::sequential;
  s.num_nodes = 0;
  s.allowed_depths = {{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  s.stage_widths = {8, 16, 32};
  return s;
}

std::vector<OpType> SearchSpaceSpec::op_types() const {
  std::vector<OpType> out;
  for (std::size_t i = 0; i < ops.size(); ++i) out.push_back({static_cast<int>(i), ops[i]});
  return out;
}

int SearchSpaceSpec::op_id(OpKind op) const {
  auto it = std::find(ops.begin(), ops.end(), op);
  return it == ops.end() ? -1 : static_cast<int>(it - ops.begin());
}

CellArchitecture::CellArchitecture(int num_nodes, std::vector<OpKind> edge_ops)
    : num_nodes_(num_nodes), ops_(std::move(edge_ops)) {
  if (num_nodes < 2) throw std::invalid_argument("a cell needs at least 2 nodes");
  if (static_cast<int>(ops_.size()) != edge_count(num_nodes)) {
    throw std::invalid_argument("cell with " + std::to_string(num_nodes) + " nodes needs " +
                                std::to_string(edge_count(num_nodes)) + " edge ops, got " +
                                std::to_string(ops_.size()));
  }
}

std::string CellArchitecture::to_string() const {
  std::string out;
  const auto edges = cell_edges(num_nodes_);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (e) out += '|';
    out += op_name(ops_[e]);
    out += '(' + std::to_string(edges[e].from + 1) + ',' + std::to_string(edges[e].to + 1) + ')';
  }
  return out;
}

CellArchitecture CellArchitecture::parse(std::string_view text) {
  std::vector<OpKind> ops;
  std::vector<Edge> seen;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto bar = text.find('|', pos);
    const auto token = text.substr(pos, bar == std::string_view::npos ? std::string_view::npos : bar - pos);
    const auto open = token.find('(');
    const auto comma = token.find(',');
    const auto close = token.find(')');
    if (open == std::string_view::npos || comma == std::string_view::npos || close != token.size() - 1 ||
        comma < open) {
      throw std::invalid_argument("malformed edge token '" + std::string(token) + "'");
    }
    ops.push_back(op_from_name(token.substr(0, open)));
    const int from = std::stoi(std::string(token.substr(open + 1, comma - open - 1)));
    const int to = std::stoi(std::string(token.substr(comma + 1, close - comma - 1)));
    seen.push_back({from - 1, to - 1});
    if (bar == std::string_view::npos) break;
    pos = bar + 1;
  }
  int n = 2;
  while (edge_count(n) < static_cast<int>(ops.size())) ++n;
  if (edge_count(n) != static_cast<int>(ops.size()) || seen != cell_edges(n)) {
    throw std::invalid_argument("edges are not the complete lexicographic edge list: '" + std::string(text) + "'");
  }
  return CellArchitecture(n, std::move(ops));
}

void validate(const CellArchitecture& arch, const SearchSpaceSpec& spec) {
  if (spec.kind != SpaceKind::topological) throw std::invalid_argument("cell architecture in a sequential space");
  if (arch.num_nodes() != spec.num_nodes) {
    throw std::invalid_argument("cell has " + std::to_string(arch.num_nodes()) + " nodes, space expects " +
                                std::to_string(spec.num_nodes));
  }
  for (OpKind op : arch.ops()) {
    if (!spec.contains(op)) throw std::invalid_argument("op '" + std::string(op_name(op)) + "' not in the space");
  }
}

std::size_t space_size(const SearchSpaceSpec& spec) {
  std::size_t n = 1;
  if (spec.kind == SpaceKind::topological) {
    for (int e = 0; e < edge_count(spec.num_nodes); ++e) n *= spec.ops.size();
  } else {
    for (const auto& depths : spec.allowed_depths) n *= depths.size();
  }
  return n;
}

SpaceEnumeration enumerate_space(const SearchSpaceSpec& spec) {
  SpaceEnumeration out;
  if (spec.kind == SpaceKind::sequential) {
    if (spec.allowed_depths.empty() || spec.stage_widths.size() != spec.allowed_depths.size()) {
      throw std::invalid_argument("sequential space needs one depth list and one width per stage");
    }
    for (const auto& d : spec.allowed_depths) {
      if (d.empty()) throw std::invalid_argument("sequential space has a stage with no allowed depths");
    }
    for (int w : spec.stage_widths) {
      if (w <= 0) throw std::invalid_argument("stage widths must be positive");
    }
    const std::size_t stages = spec.allowed_depths.size();
    std::vector<std::size_t> digit(stages, 0);
    while (true) {
      SequentialArchitecture a;
      a.stage_widths = spec.stage_widths;
      for (std::size_t s = 0; s < stages; ++s) a.stage_depths.push_back(spec.allowed_depths[s][digit[s]]);
      out.sequential.push_back(std::move(a));
      std::size_t s = stages;
      while (s > 0) {
        --s;
        if (++digit[s] < spec.allowed_depths[s].size()) break;
        digit[s] = 0;
        if (s == 0) return out;
      }
    }
  }
  if (spec.ops.empty()) throw std::invalid_argument("topological space has no ops");
  if (spec.num_nodes < 2) throw std::invalid_argument("topological space needs at least 2 nodes");
  const int edges = edge_count(spec.num_nodes);
  const std::size_t total = space_size(spec);
  out.cells.reserve(total);
  std::vector<OpKind> ops(static_cast<std::size_t>(edges));
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rem = idx;
    for (int e = edges - 1; e >= 0; --e) {
      ops[static_cast<std::size_t>(e)] = spec.ops[rem % spec.ops.size()];
      rem /= spec.ops.size();
    }
    out.cells.emplace_back(spec.num_nodes, ops);
  }
  return out;
}

CellArchitecture sample_uniform(const SearchSpaceSpec& spec, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, spec.ops.size() - 1);
  std::vector<OpKind> ops(static_cast<std::size_t>(edge_count(spec.num_nodes)));
  for (auto& op : ops) op = spec.ops[pick(rng)];
  return CellArchitecture(spec.num_nodes, std::move(ops));
}

CellArchitecture sample_uniform(const SearchSpaceSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_uniform(spec, rng);
}

std::optional<CellArchitecture> relabel(const CellArchitecture& arch, const std::vector<int>& perm) {
  const int n = arch.num_nodes();
  if (static_cast<int>(perm.size()) != n || perm.front() != 0 || perm.back() != n - 1) {
    throw std::invalid_argument("relabeling must fix the input and output nodes");
  }
  std::vector<OpKind> ops(static_cast<std::size_t>(arch.num_edges()), OpKind::none);
  const auto edges = cell_edges(n);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const OpKind op = arch.op(static_cast<int>(e));
    if (op == OpKind::none) continue;
    const int a = perm[static_cast<std::size_t>(edges[e].from)];
    const int b = perm[static_cast<std::size_t>(edges[e].to)];
    if (a >= b) return std::nullopt;
    ops[static_cast<std::size_t>(edge_index(n, a, b))] = op;
  }
  return CellArchitecture(n, std::move(ops));
}

std::vector<std::vector<int>> valid_relabelings(const CellArchitecture& arch) {
  const int n = arch.num_nodes();
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::vector<int>> out;
  do {
    if (relabel(arch, perm)) out.push_back(perm);
  } while (std::next_permutation(perm.begin() + 1, perm.end() - 1));
  return out;
}

CellArchitecture canonical_representative(const CellArchitecture& arch) {
  CellArchitecture best = arch;
  for (const auto& perm : valid_relabelings(arch)) {
    auto cand = relabel(arch, perm);
    if (cand->ops() < best.ops()) best = *cand;
  }
  return best;
}

std::string canonical_form(const CellArchitecture& arch) { return canonical_representative(arch).to_string(); }

double complexity(const CellArchitecture& arch, const SearchSpaceSpec& spec) {
  std::int64_t total = 0;
  for (int s = 0; s < spec.stacking.stages; ++s) {
    std::int64_t per_cell = 0;
    for (OpKind op : arch.ops()) per_cell += op_param_count(op, spec.stacking.stage_channels(s));
    total += per_cell * spec.stacking.cells_per_stage;
  }
  return static_cast<double>(total);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace closenas

#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "closenas/archspace.hpp"

namespace testing {

using LabeledEdges = std::set<std::tuple<int, int, closenas::OpKind>>;

inline LabeledEdges labeled_edges(const closenas::CellArchitecture& a) {
  LabeledEdges out;
  const auto edges = closenas::cell_edges(a.num_nodes());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto op = a.op(static_cast<int>(e));
    if (op != closenas::OpKind::none) out.emplace(edges[e].from, edges[e].to, op);
  }
  return out;
}

/// Node map pi (a's node i is b's node pi[i]) taking the labeled edge set of
/// `a` onto that of `b`, found by trying every permutation of the
/// intermediate nodes.
inline std::optional<std::vector<int>> find_isomorphism(const closenas::CellArchitecture& a,
                                                        const closenas::CellArchitecture& b) {
  const int n = a.num_nodes();
  std::vector<int> mid;
  for (int i = 1; i < n - 1; ++i) mid.push_back(i);
  const auto ea = labeled_edges(a), eb = labeled_edges(b);
  if (ea.size() != eb.size()) return std::nullopt;
  do {
    std::vector<int> pi(static_cast<std::size_t>(n));
    pi[0] = 0;
    pi[static_cast<std::size_t>(n - 1)] = n - 1;
    for (int i = 1; i < n - 1; ++i) pi[static_cast<std::size_t>(i)] = mid[static_cast<std::size_t>(i - 1)];
    LabeledEdges mapped;
    for (const auto& [i, j, op] : ea) mapped.emplace(pi[static_cast<std::size_t>(i)], pi[static_cast<std::size_t>(j)], op);
    if (mapped == eb) return pi;
  } while (std::next_permutation(mid.begin(), mid.end()));
  return std::nullopt;
}

/// Distinct isomorphic pairs (a != b) drawn by walking the enumeration order.
inline std::vector<std::pair<closenas::CellArchitecture, closenas::CellArchitecture>> isomorphic_pairs(
    const closenas::SearchSpaceSpec& spec, std::size_t count) {
  std::vector<std::pair<closenas::CellArchitecture, closenas::CellArchitecture>> out;
  const auto all = closenas::enumerate_space(spec).cells;
  for (std::size_t i = 0; i < all.size() && out.size() < count; ++i) {
    for (std::size_t j = i + 1; j < all.size() && out.size() < count; ++j) {
      if (find_isomorphism(all[i], all[j])) out.emplace_back(all[i], all[j]);
    }
  }
  return out;
}

}  // namespace testing

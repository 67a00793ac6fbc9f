#pragma once

#include <random>
#include <vector>

#include "closenas/nn.hpp"

namespace closenas {

struct EmbedderConfig {
  int op_dim = 32;
  int node_dim = 32;
};

/// Graph encoder that mirrors the cell's data flow:
///   E_1 = input embedding
///   E_j = sum_{i<j, o(i,j) != none} sigmoid(OpEmb(o(i,j)) W_o) * (E_i W_x)
/// `none` edges carry no data, so they contribute nothing; this keeps the
/// embedding of a node independent of how absent edges are labeled, which is
/// what makes counterpart nodes of isomorphic cells embed identically.
template <typename T>
class ArchEmbedder {
 public:
  ArchEmbedder(const SearchSpaceSpec& spec, EmbedderConfig config, std::mt19937_64& rng);

  /// Node embeddings E_1..E_N, each {1, node_dim}.
  std::vector<Var<T>> embed(Tape<T>& tape, const CellArchitecture& arch);

  const EmbedderConfig& config() const noexcept { return config_; }
  void append_parameters(std::vector<Parameter<T>*>& out);

  Parameter<T> op_table;    // {num_ops, op_dim}
  Parameter<T> w_op;        // {op_dim, node_dim}
  Parameter<T> w_node;      // {node_dim, node_dim}
  Parameter<T> input_node;  // {1, node_dim}

 private:
  std::vector<OpKind> ops_;
  EmbedderConfig config_;
};

}  // namespace closenas

#include "closenas/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace closenas {

namespace ops = compute;

template <typename T>
ArchEmbedder<T>::ArchEmbedder(const SearchSpaceSpec& spec, EmbedderConfig config, std::mt19937_64& rng)
    : ops_(spec.ops), config_(config) {
  if (config.op_dim < 1 || config.node_dim < 1) throw std::invalid_argument("embedding dimensions must be >= 1");
  const int n_ops = static_cast<int>(ops_.size());
  op_table = Parameter<T>("gate/embedder/op_table",
                          uniform_tensor<T>({n_ops, config.op_dim}, 1.0 / std::sqrt(double(n_ops)), rng));
  w_op = Parameter<T>("gate/embedder/w_op",
                      uniform_tensor<T>({config.op_dim, config.node_dim}, 1.0 / std::sqrt(double(config.op_dim)), rng));
  w_node = Parameter<T>("gate/embedder/w_node", uniform_tensor<T>({config.node_dim, config.node_dim},
                                                                  1.0 / std::sqrt(double(config.node_dim)), rng));
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<T> input({1, config.node_dim});
  for (auto& v : input.storage()) v = static_cast<T>(normal(rng));
  input_node = Parameter<T>("gate/embedder/input_node", std::move(input));
}

template <typename T>
std::vector<Var<T>> ArchEmbedder<T>::embed(Tape<T>& tape, const CellArchitecture& arch) {
  const int n_ops = static_cast<int>(ops_.size());
  const compute::Shape table_shape{n_ops, config_.op_dim};
  if (op_table.value.shape() != table_shape || w_op.value.shape() != compute::Shape{config_.op_dim, config_.node_dim} ||
      w_node.value.shape() != compute::Shape{config_.node_dim, config_.node_dim} ||
      input_node.value.shape() != compute::Shape{1, config_.node_dim}) {
    throw std::invalid_argument("embedder parameter dimensions are inconsistent");
  }
  auto table = tape.parameter(op_table);
  auto wo = tape.parameter(w_op);
  auto wx = tape.parameter(w_node);

  const int n = arch.num_nodes();
  std::vector<Var<T>> nodes(static_cast<std::size_t>(n));
  std::vector<Var<T>> projected(static_cast<std::size_t>(n));
  nodes[0] = tape.parameter(input_node);
  std::vector<Var<T>> gates(static_cast<std::size_t>(n_ops));
  for (int j = 1; j < n; ++j) {
    std::vector<Var<T>> terms;
    for (int i = 0; i < j; ++i) {
      const OpKind op = arch.op(i, j);
      if (op == OpKind::none) continue;
      const auto it = std::find(ops_.begin(), ops_.end(), op);
      if (it == ops_.end()) throw std::invalid_argument("op '" + std::string(op_name(op)) + "' unknown to embedder");
      const auto id = static_cast<std::size_t>(it - ops_.begin());
      if (!gates[id].valid()) gates[id] = ops::sigmoid(ops::matmul(ops::row(table, static_cast<int>(id)), wo));
      auto& proj = projected[static_cast<std::size_t>(i)];
      if (!proj.valid()) proj = ops::matmul(nodes[static_cast<std::size_t>(i)], wx);
      terms.push_back(ops::mul(gates[id], proj));
    }
    nodes[static_cast<std::size_t>(j)] =
        terms.empty() ? ops::zeros(tape, {1, config_.node_dim}) : ops::add_n(terms);
  }
  return nodes;
}

template <typename T>
void ArchEmbedder<T>::append_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&op_table);
  out.push_back(&w_op);
  out.push_back(&w_node);
  out.push_back(&input_node);
}

template class ArchEmbedder<float>;
template class ArchEmbedder<double>;

}  // namespace closenas

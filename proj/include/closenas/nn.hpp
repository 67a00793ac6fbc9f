#pragma once

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "closenas/archspace.hpp"
#include "closenas/compute/ops.hpp"

namespace closenas {

using compute::Parameter;
using compute::Tape;
using compute::Tensor;
using compute::Var;

/// Uniform(-bound, bound) fill.
template <typename T>
Tensor<T> uniform_tensor(const compute::Shape& shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(shape);
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
struct ConvParams {
  Parameter<T> weight;  // {Co, Ci, k, k}
  Parameter<T> bias;    // {Co}

  /// Fan-in scaled uniform init, bound 1/sqrt(Ci*k*k) for both arrays.
  static ConvParams make(const std::string& name, int c_out, int c_in, int k, std::mt19937_64& rng);
  ConvParams renamed(const std::string& name) const;
};

template <typename T>
struct LinearParams {
  Parameter<T> weight;  // {in, out}
  Parameter<T> bias;    // {out}

  static LinearParams make(const std::string& name, int in, int out, std::mt19937_64& rng);
};

template <typename T>
Var<T> linear(Tape<T>& tape, LinearParams<T>& layer, Var<T> x) {
  return compute::add_bias(compute::matmul(x, tape.parameter(layer.weight)), tape.parameter(layer.bias));
}

/// Parameters of every parameterized candidate op at one channel width,
/// indexed by OpKind.
template <typename T>
struct OpParamSet {
  std::array<std::optional<ConvParams<T>>, 5> by_op;

  static OpParamSet make(const std::string& prefix, const std::vector<OpKind>& ops, int channels,
                         std::mt19937_64& rng);
  ConvParams<T>* find(OpKind op) {
    auto& slot = by_op[static_cast<std::size_t>(op)];
    return slot ? &*slot : nullptr;
  }
  const ConvParams<T>* find(OpKind op) const {
    const auto& slot = by_op[static_cast<std::size_t>(op)];
    return slot ? &*slot : nullptr;
  }
  OpParamSet renamed(const std::string& prefix) const;
  void append_parameters(std::vector<Parameter<T>*>& out);
};

/// none -> invalid Var, skip -> x, pooling, or ReLU -> Conv -> BN.
template <typename T>
Var<T> apply_edge_op(Tape<T>& tape, OpKind op, Var<T> x, ConvParams<T>* params);

/// Architecture-independent parts: stem, stage reductions, classifier.
template <typename T>
struct Backbone {
  ConvParams<T> stem;                     // 3x3, input -> C0
  std::vector<ConvParams<T>> reductions;  // 1x1, C_{s-1} -> C_s after 2x2 pooling
  LinearParams<T> classifier;

  static Backbone make(const StackingConfig& stacking, std::mt19937_64& rng);
  void append_parameters(std::vector<Parameter<T>*>& out);
};

/// Evaluates the edge at (stage, cell, edge index) with op `op` on `x`.
/// May return an invalid Var for ops that contribute nothing.
template <typename T>
using EdgeFn = std::function<Var<T>(int stage, int cell, int edge, OpKind op, Var<T> x)>;

struct ForwardOptions {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;  // dropout is active only when set
};

/// Stem -> stages of stacked cells (with a reduction between stages) ->
/// ReLU -> global pooling -> dropout -> classifier. Returns {N, classes}.
template <typename T>
Var<T> network_forward(Tape<T>& tape, Backbone<T>& backbone, const StackingConfig& stacking,
                       const CellArchitecture& arch, const Tensor<T>& input, const EdgeFn<T>& edge_fn,
                       const ForwardOptions& options);

}  // namespace closenas

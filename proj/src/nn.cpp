#include "closenas/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace closenas {

namespace ops = compute;

template <typename T>
ConvParams<T> ConvParams<T>::make(const std::string& name, int c_out, int c_in, int k, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * k * k));
  ConvParams p;
  p.weight = Parameter<T>(name + "/weight", uniform_tensor<T>({c_out, c_in, k, k}, bound, rng));
  p.bias = Parameter<T>(name + "/bias", uniform_tensor<T>({c_out}, bound, rng));
  return p;
}

template <typename T>
ConvParams<T> ConvParams<T>::renamed(const std::string& name) const {
  ConvParams p;
  p.weight = Parameter<T>(name + "/weight", weight.value);
  p.bias = Parameter<T>(name + "/bias", bias.value);
  return p;
}

template <typename T>
LinearParams<T> LinearParams<T>::make(const std::string& name, int in, int out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LinearParams p;
  p.weight = Parameter<T>(name + "/weight", uniform_tensor<T>({in, out}, bound, rng));
  p.bias = Parameter<T>(name + "/bias", uniform_tensor<T>({out}, bound, rng));
  return p;
}

template <typename T>
OpParamSet<T> OpParamSet<T>::make(const std::string& prefix, const std::vector<OpKind>& ops, int channels,
                                  std::mt19937_64& rng) {
  OpParamSet set;
  for (OpKind op : ops) {
    if (!op_has_params(op)) continue;
    const int k = op == OpKind::conv3x3 ? 3 : 1;
    set.by_op[static_cast<std::size_t>(op)] =
        ConvParams<T>::make(prefix + "/" + std::string(op_name(op)), channels, channels, k, rng);
  }
  return set;
}

template <typename T>
OpParamSet<T> OpParamSet<T>::renamed(const std::string& prefix) const {
  OpParamSet set;
  for (std::size_t i = 0; i < by_op.size(); ++i) {
    if (by_op[i]) set.by_op[i] = by_op[i]->renamed(prefix + "/" + std::string(op_name(static_cast<OpKind>(i))));
  }
  return set;
}

template <typename T>
void OpParamSet<T>::append_parameters(std::vector<Parameter<T>*>& out) {
  for (auto& slot : by_op) {
    if (!slot) continue;
    out.push_back(&slot->weight);
    out.push_back(&slot->bias);
  }
}

template <typename T>
Var<T> apply_edge_op(Tape<T>& tape, OpKind op, Var<T> x, ConvParams<T>* params) {
  switch (op) {
    case OpKind::none:
      return {};
    case OpKind::skip_connect:
      return x;
    case OpKind::avg_pool3x3:
      return ops::avg_pool3x3(x);
    case OpKind::conv1x1:
    case OpKind::conv3x3: {
      if (params == nullptr) throw std::logic_error("no parameters bound for " + std::string(op_name(op)));
      auto y = ops::conv2d(ops::relu(x), tape.parameter(params->weight), tape.parameter(params->bias));
      return ops::batch_norm(y);
    }
  }
  throw std::logic_error("unhandled op");
}

template <typename T>
Backbone<T> Backbone<T>::make(const StackingConfig& stacking, std::mt19937_64& rng) {
  Backbone b;
  b.stem = ConvParams<T>::make("stem", stacking.base_channels, stacking.input_channels, 3, rng);
  for (int s = 1; s < stacking.stages; ++s) {
    b.reductions.push_back(ConvParams<T>::make("reduce" + std::to_string(s), stacking.stage_channels(s),
                                               stacking.stage_channels(s - 1), 1, rng));
  }
  b.classifier = LinearParams<T>::make("classifier", stacking.stage_channels(stacking.stages - 1),
                                       stacking.num_classes, rng);
  return b;
}

template <typename T>
void Backbone<T>::append_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&stem.weight);
  out.push_back(&stem.bias);
  for (auto& r : reductions) {
    out.push_back(&r.weight);
    out.push_back(&r.bias);
  }
  out.push_back(&classifier.weight);
  out.push_back(&classifier.bias);
}

template <typename T>
Var<T> network_forward(Tape<T>& tape, Backbone<T>& backbone, const StackingConfig& stacking,
                       const CellArchitecture& arch, const Tensor<T>& input, const EdgeFn<T>& edge_fn,
                       const ForwardOptions& options) {
  if (input.rank() != 4 || input.dim(0) != stacking.input_channels) {
    throw std::invalid_argument("network input must be {" + std::to_string(stacking.input_channels) +
                                ", N, H, W}, got " + compute::shape_string(input.shape()));
  }
  auto x = ops::batch_norm(ops::conv2d(tape.constant(input), tape.parameter(backbone.stem.weight),
                                       tape.parameter(backbone.stem.bias)));
  const int n = arch.num_nodes();
  const auto edges = cell_edges(n);
  for (int s = 0; s < stacking.stages; ++s) {
    if (s > 0) {
      auto& red = backbone.reductions[static_cast<std::size_t>(s - 1)];
      x = ops::batch_norm(ops::conv2d(ops::relu(ops::avg_pool2x2(x)), tape.parameter(red.weight),
                                      tape.parameter(red.bias)));
    }
    for (int c = 0; c < stacking.cells_per_stage; ++c) {
      std::vector<Var<T>> nodes(static_cast<std::size_t>(n));
      nodes[0] = x;
      for (int j = 1; j < n; ++j) {
        std::vector<Var<T>> terms;
        for (int i = 0; i < j; ++i) {
          const int e = edge_index(n, i, j);
          auto out = edge_fn(s, c, e, arch.op(e), nodes[static_cast<std::size_t>(i)]);
          if (out.valid()) terms.push_back(out);
        }
        nodes[static_cast<std::size_t>(j)] = terms.empty() ? ops::zeros(tape, x.shape()) : ops::add_n(terms);
      }
      x = nodes.back();
    }
  }
  auto pooled = ops::global_avg_pool(ops::relu(x));
  if (options.rng != nullptr && options.dropout > 0.0) pooled = ops::dropout(pooled, options.dropout, *options.rng);
  return linear(tape, backbone.classifier, pooled);
}

template struct ConvParams<float>;
template struct ConvParams<double>;
template struct LinearParams<float>;
template struct LinearParams<double>;
template struct OpParamSet<float>;
template struct OpParamSet<double>;
template struct Backbone<float>;
template struct Backbone<double>;
template Var<float> apply_edge_op(Tape<float>&, OpKind, Var<float>, ConvParams<float>*);
template Var<double> apply_edge_op(Tape<double>&, OpKind, Var<double>, ConvParams<double>*);
template Var<float> network_forward(Tape<float>&, Backbone<float>&, const StackingConfig&, const CellArchitecture&,
                                    const Tensor<float>&, const EdgeFn<float>&, const ForwardOptions&);
template Var<double> network_forward(Tape<double>&, Backbone<double>&, const StackingConfig&,
                                     const CellArchitecture&, const Tensor<double>&, const EdgeFn<double>&,
                                     const ForwardOptions&);

}  // namespace closenas

#include "closenas/gate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace closenas {

namespace ops = compute;

template <typename T>
std::vector<T> assignment_probs(std::span<const T> logits) {
  if (logits.empty()) throw std::invalid_argument("assignment_probs: empty logits");
  const T mx = *std::max_element(logits.begin(), logits.end());
  std::vector<T> p(logits.size());
  T z = T(0);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - mx);
    z += p[k];
  }
  for (auto& v : p) v /= z;
  return p;
}

template <typename T>
int argmax_lowest(std::span<const T> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty vector");
  int best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

std::vector<double> sample_gumbel(int k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> g(static_cast<std::size_t>(k));
  for (auto& v : g) {
    const double u = std::clamp(unif(rng), 1e-12, 1.0 - 1e-12);
    v = -std::log(-std::log(u));
  }
  return g;
}

template <typename T>
EdgeAssignment<T> gumbel_assignment(std::span<const T> logits, double tau, std::span<const T> noise) {
  if (!(tau > 0.0)) throw std::invalid_argument("Gumbel temperature must be positive");
  if (noise.size() != logits.size()) throw std::invalid_argument("noise and logits differ in length");
  EdgeAssignment<T> a;
  a.probs = assignment_probs(logits);
  a.gumbel.assign(noise.begin(), noise.end());
  std::vector<T> perturbed(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) perturbed[k] = logits[k] + noise[k];
  a.index = argmax_lowest<T>(perturbed);
  a.hard.assign(logits.size(), T(0));
  a.hard[static_cast<std::size_t>(a.index)] = T(1);
  for (auto& v : perturbed) v = static_cast<T>(v / tau);
  a.relaxed = assignment_probs<T>(perturbed);
  return a;
}

template <typename T>
EdgeAssignment<T> gumbel_assignment(std::span<const T> logits, double tau, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto g = sample_gumbel(static_cast<int>(logits.size()), rng);
  std::vector<T> noise(g.begin(), g.end());
  return gumbel_assignment<T>(logits, tau, noise);
}

template <typename T>
TapeAssignment<T> assign_on_tape(Var<T> logits, std::span<const T> noise, double tau) {
  // Copied: recording new nodes may reallocate the tape's storage.
  const Tensor<T> lv = logits.value();
  if (noise.size() != lv.size()) throw std::invalid_argument("noise and logits differ in length");
  auto& tape = logits.tape();
  std::vector<T> perturbed(lv.size());
  for (std::size_t k = 0; k < lv.size(); ++k) perturbed[k] = lv[k] + noise[k];
  TapeAssignment<T> out;
  out.index = argmax_lowest<T>(perturbed);
  auto shifted = ops::add(logits, tape.constant(Tensor<T>(lv.shape(), std::vector<T>(noise.begin(), noise.end()))));
  out.relaxed = ops::softmax(ops::scale_const(shifted, static_cast<T>(1.0 / tau)));
  Tensor<T> hard(lv.shape());
  hard[static_cast<std::size_t>(out.index)] = T(1);
  out.weight = ops::select(ops::straight_through(out.relaxed, hard), out.index);
  return out;
}

template <typename T>
GateModel<T>::GateModel(const SearchSpaceSpec& spec, GateConfig config, int num_blocks, std::mt19937_64& rng)
    : embedder_(spec, config.embedder, rng), tau_(config.tau) {
  if (num_blocks < 1) throw std::invalid_argument("the gate needs at least one output unit");
  set_tau(config.tau);
  int width = 2 * config.embedder.node_dim;
  for (std::size_t l = 0; l < config.hidden.size(); ++l) {
    mlp_.push_back(LinearParams<T>::make("gate/mlp" + std::to_string(l), width, config.hidden[l], rng));
    width = config.hidden[l];
  }
  mlp_.push_back(LinearParams<T>::make("gate/mlp_out", width, num_blocks, rng));
}

template <typename T>
int GateModel<T>::num_blocks() const {
  return mlp_.back().bias.value.dim(0);
}

template <typename T>
void GateModel<T>::set_tau(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("Gumbel temperature must be positive");
  tau_ = tau;
}

template <typename T>
Var<T> GateModel<T>::head(Tape<T>& tape, Var<T> x) {
  for (std::size_t l = 0; l < mlp_.size(); ++l) {
    x = linear(tape, mlp_[l], x);
    if (l + 1 < mlp_.size()) x = ops::relu(x);
  }
  return x;
}

template <typename T>
std::vector<Var<T>> GateModel<T>::edge_logits(Tape<T>& tape, const CellArchitecture& arch) {
  const auto nodes = embedder_.embed(tape, arch);
  std::vector<Var<T>> out;
  for (const auto& e : cell_edges(arch.num_nodes())) {
    out.push_back(head(tape, ops::concat_cols(nodes[static_cast<std::size_t>(e.from)],
                                              nodes[static_cast<std::size_t>(e.to)])));
  }
  return out;
}

template <typename T>
Var<T> GateModel<T>::gate_logits(Tape<T>& tape, const CellArchitecture& arch, Edge edge) {
  if (edge.from < 0 || edge.to >= arch.num_nodes() || edge.from >= edge.to) {
    throw std::invalid_argument("edge (" + std::to_string(edge.from + 1) + "," + std::to_string(edge.to + 1) +
                                ") is not part of the architecture");
  }
  const auto nodes = embedder_.embed(tape, arch);
  return head(tape, ops::concat_cols(nodes[static_cast<std::size_t>(edge.from)],
                                     nodes[static_cast<std::size_t>(edge.to)]));
}

template <typename T>
std::vector<std::vector<T>> GateModel<T>::logits(const CellArchitecture& arch) {
  Tape<T> tape;
  std::vector<std::vector<T>> out;
  for (const auto& v : edge_logits(tape, arch)) out.emplace_back(v.value().values().begin(), v.value().values().end());
  return out;
}

template <typename T>
std::vector<std::vector<T>> GateModel<T>::probabilities(const CellArchitecture& arch) {
  auto out = logits(arch);
  for (auto& v : out) v = assignment_probs<T>(v);
  return out;
}

template <typename T>
void GateModel<T>::add_output_unit_wit(int parent) {
  const int k = num_blocks();
  if (parent < 0 || parent >= k) {
    throw std::out_of_range("WIT parent " + std::to_string(parent) + " outside [0, " + std::to_string(k) + ")");
  }
  auto& out = mlp_.back();
  const int in = out.weight.value.dim(0);
  Tensor<T> w({in, k + 1});
  for (int r = 0; r < in; ++r) {
    for (int c = 0; c < k; ++c) {
      w[static_cast<std::size_t>(r) * (k + 1) + c] = out.weight.value[static_cast<std::size_t>(r) * k + c];
    }
    w[static_cast<std::size_t>(r) * (k + 1) + k] = out.weight.value[static_cast<std::size_t>(r) * k + parent];
  }
  Tensor<T> b({k + 1});
  for (int c = 0; c < k; ++c) b[c] = out.bias.value[c];
  b[k] = out.bias.value[parent];
  out.weight = Parameter<T>(out.weight.name, std::move(w));
  out.bias = Parameter<T>(out.bias.name, std::move(b));
}

template <typename T>
void GateModel<T>::add_output_unit_random(std::mt19937_64& rng) {
  const int k = num_blocks();
  auto& out = mlp_.back();
  const int in = out.weight.value.dim(0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> w({in, k + 1});
  for (int r = 0; r < in; ++r) {
    for (int c = 0; c < k; ++c) {
      w[static_cast<std::size_t>(r) * (k + 1) + c] = out.weight.value[static_cast<std::size_t>(r) * k + c];
    }
    w[static_cast<std::size_t>(r) * (k + 1) + k] = static_cast<T>(dist(rng));
  }
  Tensor<T> b({k + 1});
  for (int c = 0; c < k; ++c) b[c] = out.bias.value[c];
  b[k] = static_cast<T>(dist(rng));
  out.weight = Parameter<T>(out.weight.name, std::move(w));
  out.bias = Parameter<T>(out.bias.name, std::move(b));
}

template <typename T>
void GateModel<T>::append_parameters(std::vector<Parameter<T>*>& out) {
  embedder_.append_parameters(out);
  for (auto& l : mlp_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

template std::vector<float> assignment_probs(std::span<const float>);
template std::vector<double> assignment_probs(std::span<const double>);
template int argmax_lowest(std::span<const float>);
template int argmax_lowest(std::span<const double>);
template EdgeAssignment<float> gumbel_assignment(std::span<const float>, double, std::span<const float>);
template EdgeAssignment<double> gumbel_assignment(std::span<const double>, double, std::span<const double>);
template EdgeAssignment<float> gumbel_assignment(std::span<const float>, double, std::uint64_t);
template EdgeAssignment<double> gumbel_assignment(std::span<const double>, double, std::uint64_t);
template TapeAssignment<float> assign_on_tape(Var<float>, std::span<const float>, double);
template TapeAssignment<double> assign_on_tape(Var<double>, std::span<const double>, double);
template class GateModel<float>;
template class GateModel<double>;

}  // namespace closenas

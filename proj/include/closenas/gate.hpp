#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "closenas/embedder.hpp"

namespace closenas {

struct GateConfig {
  EmbedderConfig embedder;
  std::vector<int> hidden{64, 64};
  double tau = 1.0;
};

/// Per-edge assignment of a GLOW block.
template <typename T>
struct EdgeAssignment {
  std::vector<T> probs;    // softmax(lambda)
  std::vector<T> hard;     // one-hot at argmax(lambda + g)
  std::vector<T> relaxed;  // softmax((lambda + g) / tau)
  std::vector<T> gumbel;   // g
  int index = 0;
};

template <typename T>
std::vector<T> assignment_probs(std::span<const T> logits);

/// argmax with the lowest index winning ties.
template <typename T>
int argmax_lowest(std::span<const T> values);

/// i.i.d. Gumbel(0, 1) draws.
std::vector<double> sample_gumbel(int k, std::mt19937_64& rng);

template <typename T>
EdgeAssignment<T> gumbel_assignment(std::span<const T> logits, double tau, std::span<const T> noise);
template <typename T>
EdgeAssignment<T> gumbel_assignment(std::span<const T> logits, double tau, std::uint64_t seed);

/// Straight-through assignment on a tape: the forward weight of the chosen
/// block is exactly 1 while its gradient flows through the relaxed softmax.
template <typename T>
struct TapeAssignment {
  int index = 0;
  Var<T> relaxed;  // {1, K}
  Var<T> weight;   // {1}: straight-through h[index]
};

template <typename T>
TapeAssignment<T> assign_on_tape(Var<T> logits, std::span<const T> noise, double tau);

/// Architecture embedder plus an MLP head with one output unit per GLOW block.
template <typename T>
class GateModel {
 public:
  GateModel(const SearchSpaceSpec& spec, GateConfig config, int num_blocks, std::mt19937_64& rng);

  int num_blocks() const;
  double tau() const noexcept { return tau_; }
  void set_tau(double tau);

  /// lambda for every edge of `arch`, each {1, K}, in lexicographic edge order.
  std::vector<Var<T>> edge_logits(Tape<T>& tape, const CellArchitecture& arch);
  /// lambda for a single edge; throws when the edge is not part of `arch`.
  Var<T> gate_logits(Tape<T>& tape, const CellArchitecture& arch, Edge edge);

  /// Tape-free conveniences.
  std::vector<std::vector<T>> logits(const CellArchitecture& arch);
  std::vector<std::vector<T>> probabilities(const CellArchitecture& arch);

  /// WIT: appends an output unit whose weights and bias copy unit `parent`.
  void add_output_unit_wit(int parent);
  /// Appends a freshly initialized output unit.
  void add_output_unit_random(std::mt19937_64& rng);

  ArchEmbedder<T>& embedder() noexcept { return embedder_; }
  std::vector<LinearParams<T>>& mlp() noexcept { return mlp_; }
  void append_parameters(std::vector<Parameter<T>*>& out);

 private:
  Var<T> head(Tape<T>& tape, Var<T> x);

  ArchEmbedder<T> embedder_;
  std::vector<LinearParams<T>> mlp_;
  double tau_;
};

}  // namespace closenas

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "closenas/gate.hpp"
#include "closenas/glow.hpp"

namespace closenas {

enum class SupernetVariant { closenet, supernet1, supernet2, close_s };

std::string_view variant_name(SupernetVariant v);
SupernetVariant variant_from_name(std::string_view name);

/// How CLOSENet picks a block per edge: the learned GATE, or a fixed
/// pseudo-random block per (architecture, edge).
enum class AssignmentPolicy { gate, random };

/// `straight_through` evaluates only the hard-selected block and scales it by
/// the straight-through weight; `relaxed` sums every block weighted by the
/// relaxed distribution (a fully differentiable reference path).
enum class GateGradient { straight_through, relaxed };

enum class Mode { train, eval };

struct SupernetConfig {
  SearchSpaceSpec spec = SearchSpaceSpec::micro();
  SupernetVariant variant = SupernetVariant::closenet;
  AssignmentPolicy assignment = AssignmentPolicy::gate;
  int initial_blocks = 1;
  GateConfig gate;
  double dropout = 0.1;
  std::uint64_t seed = 0;
};

/// Block used by CLOSE-S: stage 1 shares block 0 everywhere, stage 2 gives
/// each edge its own block.
int close_s_assignment(int edge, int stage);

/// Deterministic pseudo-random block for the random-assignment ablation.
int random_block(const CellArchitecture& arch, int edge, int num_blocks, std::uint64_t seed);

template <typename T>
class Supernet {
 public:
  explicit Supernet(SupernetConfig config);

  const SupernetConfig& config() const noexcept { return config_; }
  SupernetVariant variant() const noexcept { return config_.variant; }
  const StackingConfig& stacking() const noexcept { return config_.spec.stacking; }

  /// Class logits {N, classes}. In train mode Gumbel noise is drawn from
  /// `rng` per edge and dropout is applied; eval mode is noise-free.
  Var<T> forward(Tape<T>& tape, const CellArchitecture& arch, const Tensor<T>& input, Mode mode,
                 std::mt19937_64* rng = nullptr, GateGradient gradient = GateGradient::straight_through);

  /// Noise-free block index per edge (-1 for vanilla variants).
  std::vector<int> assignment(const CellArchitecture& arch);

  /// Current number of GLOW blocks (0 for vanilla variants).
  int num_blocks() const;

  /// Curriculum switch: one more GLOW block and one more gate output unit,
  /// both copied from `parent` when `wit` is set, freshly drawn otherwise.
  void add_block(int parent, bool wit, std::mt19937_64& rng);

  /// CLOSE-S switch to per-edge blocks (stage 2).
  void enter_close_s_stage2(bool wit, std::mt19937_64& rng);
  int close_s_stage() const noexcept { return close_s_stage_; }

  std::vector<Parameter<T>*> parameters();
  std::size_t parameter_count();

  Backbone<T>& backbone() noexcept { return backbone_; }
  GlowBank<T>* bank() noexcept { return bank_ ? &*bank_ : nullptr; }
  GateModel<T>* gate() noexcept { return gate_ ? &*gate_ : nullptr; }
  /// Supernet-1: one slot per (stage, cell, edge); Supernet-2: per (stage, cell).
  std::vector<OpParamSet<T>>& vanilla_slots() noexcept { return slots_; }
  int vanilla_slot(int stage, int cell, int edge) const;

  /// Parameters the given edge would use under `block` (or the vanilla slot).
  ConvParams<T>* edge_params(int stage, int cell, int edge, OpKind op, int block);

 private:
  SupernetConfig config_;
  Backbone<T> backbone_;
  std::optional<GlowBank<T>> bank_;
  std::optional<GateModel<T>> gate_;
  std::vector<OpParamSet<T>> slots_;
  int close_s_stage_ = 1;
};

/// A single architecture with its own parameters for every edge of every cell.
template <typename T>
class StandaloneNet {
 public:
  StandaloneNet(const SearchSpaceSpec& spec, CellArchitecture arch, std::uint64_t seed, double dropout = 0.1);

  /// Copies the backbone and the parameters each edge uses inside `net`
  /// under the given per-edge block assignment.
  static StandaloneNet transplant(Supernet<T>& net, const CellArchitecture& arch, const std::vector<int>& blocks);

  Var<T> forward(Tape<T>& tape, const Tensor<T>& input, Mode mode, std::mt19937_64* rng = nullptr);

  const CellArchitecture& arch() const noexcept { return arch_; }
  std::vector<Parameter<T>*> parameters();
  /// Parameter count of the cell edges only.
  std::size_t cell_parameter_count() const;

 private:
  struct EmptyTag {};
  StandaloneNet(EmptyTag, const SearchSpaceSpec& spec, CellArchitecture arch, double dropout);
  int slot(int stage, int cell, int edge) const;

  SearchSpaceSpec spec_;
  CellArchitecture arch_;
  double dropout_;
  Backbone<T> backbone_;
  std::vector<std::optional<ConvParams<T>>> edges_;
};

}  // namespace closenas

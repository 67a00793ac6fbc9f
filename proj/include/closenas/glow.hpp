#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "closenas/nn.hpp"

namespace closenas {

/// One full set of candidate-op parameters for every channel stage.
template <typename T>
struct GlowBlock {
  std::vector<OpParamSet<T>> stages;
};

/// Ordered GLOW blocks; block k's arrays are named "glow/b<k>/s<stage>/<op>/...".
template <typename T>
class GlowBank {
 public:
  GlowBank(const SearchSpaceSpec& spec, int num_blocks, std::mt19937_64& rng);

  int size() const noexcept { return static_cast<int>(blocks_.size()); }
  GlowBlock<T>& block(int k) { return blocks_.at(static_cast<std::size_t>(k)); }
  const GlowBlock<T>& block(int k) const { return blocks_.at(static_cast<std::size_t>(k)); }

  /// WIT: appends a deep copy of block `parent`.
  void add_block_wit(int parent);
  /// Appends a freshly initialized block.
  void add_block_random(std::mt19937_64& rng);

  void append_parameters(std::vector<Parameter<T>*>& out);

 private:
  GlowBlock<T> make_block(int k, std::mt19937_64& rng) const;

  std::vector<OpKind> ops_;
  StackingConfig stacking_;
  std::vector<GlowBlock<T>> blocks_;
};

/// Average number of architectures sharing one block, summed over edges:
///   s = sum_(i,j) |E(i,j)| / K
double sharing_extent(const SearchSpaceSpec& spec, int num_blocks);

/// Inclusive range of sequential op positions.
struct Interval {
  int begin = 0;
  int end = 0;
  int length() const noexcept { return end - begin + 1; }
  bool operator==(const Interval&) const = default;
};

/// Block k owns `intervals[k]`; intervals are disjoint, non-empty and cover
/// [0, positions).
class IntervalAssignment {
 public:
  explicit IntervalAssignment(int positions);

  int num_blocks() const noexcept { return static_cast<int>(intervals_.size()); }
  int positions() const noexcept { return positions_; }
  const std::vector<Interval>& intervals() const noexcept { return intervals_; }
  int block_of(int position) const;

  /// Throws std::logic_error when the partition invariant is broken.
  void check() const;

  /// Splits the longest interval (earliest on ties) at its midpoint; the
  /// upper half goes to a new block. Returns the index of the split block.
  int split();

 private:
  int positions_;
  std::vector<Interval> intervals_;
};

/// Splits an interval and adds the matching WIT block to `bank`.
template <typename Bank>
int split_interval(IntervalAssignment& assignment, Bank& bank) {
  if (bank.size() != assignment.num_blocks()) {
    throw std::invalid_argument("bank has " + std::to_string(bank.size()) + " blocks, assignment has " +
                                std::to_string(assignment.num_blocks()));
  }
  const int parent = assignment.split();
  bank.add_block_wit(parent);
  return parent;
}

}  // namespace closenas

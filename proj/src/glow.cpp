#include "closenas/glow.hpp"

#include <algorithm>

namespace closenas {

namespace {

std::string stage_prefix(int k, int s) { return "glow/b" + std::to_string(k) + "/s" + std::to_string(s); }

}  // namespace

template <typename T>
GlowBank<T>::GlowBank(const SearchSpaceSpec& spec, int num_blocks, std::mt19937_64& rng)
    : ops_(spec.ops), stacking_(spec.stacking) {
  if (num_blocks < 1) throw std::invalid_argument("a GLOW bank needs at least one block");
  for (int k = 0; k < num_blocks; ++k) blocks_.push_back(make_block(k, rng));
}

template <typename T>
GlowBlock<T> GlowBank<T>::make_block(int k, std::mt19937_64& rng) const {
  GlowBlock<T> b;
  for (int s = 0; s < stacking_.stages; ++s) {
    b.stages.push_back(OpParamSet<T>::make(stage_prefix(k, s), ops_, stacking_.stage_channels(s), rng));
  }
  return b;
}

template <typename T>
void GlowBank<T>::add_block_wit(int parent) {
  if (parent < 0 || parent >= size()) {
    throw std::out_of_range("WIT parent " + std::to_string(parent) + " outside [0, " + std::to_string(size()) + ")");
  }
  const int k = size();
  GlowBlock<T> copy;
  const auto& src = blocks_[static_cast<std::size_t>(parent)];
  for (std::size_t s = 0; s < src.stages.size(); ++s) {
    copy.stages.push_back(src.stages[s].renamed(stage_prefix(k, static_cast<int>(s))));
  }
  blocks_.push_back(std::move(copy));
}

template <typename T>
void GlowBank<T>::add_block_random(std::mt19937_64& rng) {
  blocks_.push_back(make_block(size(), rng));
}

template <typename T>
void GlowBank<T>::append_parameters(std::vector<Parameter<T>*>& out) {
  for (auto& b : blocks_) {
    for (auto& s : b.stages) s.append_parameters(out);
  }
}

double sharing_extent(const SearchSpaceSpec& spec, int num_blocks) {
  if (num_blocks < 1) throw std::invalid_argument("sharing extent needs K >= 1");
  // Every cell of a complete-DAG space carries every edge, so each edge is
  // contained in all architectures of the space.
  const double per_edge = static_cast<double>(space_size(spec));
  return edge_count(spec.num_nodes) * per_edge / num_blocks;
}

IntervalAssignment::IntervalAssignment(int positions) : positions_(positions) {
  if (positions < 1) throw std::invalid_argument("interval assignment needs at least one position");
  intervals_.push_back({0, positions - 1});
}

int IntervalAssignment::block_of(int position) const {
  for (std::size_t k = 0; k < intervals_.size(); ++k) {
    if (position >= intervals_[k].begin && position <= intervals_[k].end) return static_cast<int>(k);
  }
  throw std::out_of_range("position " + std::to_string(position) + " is not assigned");
}

void IntervalAssignment::check() const {
  std::vector<Interval> sorted = intervals_;
  std::sort(sorted.begin(), sorted.end(), [](const Interval& a, const Interval& b) { return a.begin < b.begin; });
  int next = 0;
  for (const auto& iv : sorted) {
    if (iv.length() < 1) throw std::logic_error("empty interval");
    if (iv.begin != next) throw std::logic_error("intervals overlap or leave a gap");
    next = iv.end + 1;
  }
  if (next != positions_) throw std::logic_error("intervals do not cover every position");
}

int IntervalAssignment::split() {
  int chosen = -1;
  for (std::size_t k = 0; k < intervals_.size(); ++k) {
    const auto& iv = intervals_[k];
    if (iv.length() < 2) continue;
    if (chosen < 0) {
      chosen = static_cast<int>(k);
      continue;
    }
    const auto& best = intervals_[static_cast<std::size_t>(chosen)];
    if (iv.length() > best.length() || (iv.length() == best.length() && iv.begin < best.begin)) {
      chosen = static_cast<int>(k);
    }
  }
  if (chosen < 0) throw std::logic_error("every interval has length 1; nothing left to split");
  auto& iv = intervals_[static_cast<std::size_t>(chosen)];
  const int mid = (iv.begin + iv.end) / 2;
  const Interval upper{mid + 1, iv.end};
  iv.end = mid;
  intervals_.push_back(upper);
  return chosen;
}

template class GlowBank<float>;
template class GlowBank<double>;

}  // namespace closenas

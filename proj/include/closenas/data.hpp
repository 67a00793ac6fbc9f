#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "closenas/compute/tensor.hpp"

namespace closenas {

/// Frozen synthetic classification task: smoothed Gaussian images labeled by
/// a fixed-seed random convolutional teacher, class-balanced.
struct DatasetConfig {
  int image_size = 16;
  int channels = 3;
  int num_classes = 10;
  int train_size = 10240;
  int val_size = 1024;
  int teacher_width = 16;
  std::uint64_t seed = 1234;

  /// Identifies the generated data; changes whenever any field changes.
  std::string id() const;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(int channels, int image_size, int num_classes);

  int size() const noexcept { return static_cast<int>(labels_.size()); }
  int channels() const noexcept { return channels_; }
  int image_size() const noexcept { return image_size_; }
  int num_classes() const noexcept { return num_classes_; }
  const std::vector<int>& labels() const noexcept { return labels_; }

  void push_back(std::span<const float> image, int label);

  /// Batch in the network layout {C, N, H, W}.
  compute::Tensor<float> images(std::span<const int> indices) const;
  std::vector<int> labels(std::span<const int> indices) const;
  /// Contiguous index range [begin, begin + count).
  compute::Tensor<float> images(int begin, int count) const;
  std::vector<int> labels(int begin, int count) const;

  std::vector<int> class_counts() const;

 private:
  int channels_ = 3;
  int image_size_ = 16;
  int num_classes_ = 10;
  std::vector<float> pixels_;  // example-major, each {C, H, W}
  std::vector<int> labels_;
};

struct SyntheticTask {
  Dataset train;
  Dataset val;
};

/// Deterministic in the config; train and val are disjoint draws.
SyntheticTask make_synthetic_task(const DatasetConfig& config);

}  // namespace closenas

#include "closenas/data.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "closenas/archspace.hpp"
#include "closenas/compute/ops.hpp"

namespace closenas {

namespace ops = compute;
using compute::Tape;
using compute::Tensor;
using compute::Var;

std::string DatasetConfig::id() const {
  return "synthetic-teacher/v1/s" + std::to_string(image_size) + "/c" + std::to_string(channels) + "/k" +
         std::to_string(num_classes) + "/n" + std::to_string(train_size) + "+" + std::to_string(val_size) + "/w" +
         std::to_string(teacher_width) + "/seed" + std::to_string(seed);
}

Dataset::Dataset(int channels, int image_size, int num_classes)
    : channels_(channels), image_size_(image_size), num_classes_(num_classes) {}

void Dataset::push_back(std::span<const float> image, int label) {
  const auto expected = static_cast<std::size_t>(channels_) * image_size_ * image_size_;
  if (image.size() != expected) throw std::invalid_argument("image has the wrong number of pixels");
  if (label < 0 || label >= num_classes_) throw std::invalid_argument("label out of range");
  pixels_.insert(pixels_.end(), image.begin(), image.end());
  labels_.push_back(label);
}

Tensor<float> Dataset::images(std::span<const int> indices) const {
  const int hw = image_size_ * image_size_;
  const int n = static_cast<int>(indices.size());
  Tensor<float> out({channels_, n, image_size_, image_size_});
  for (int b = 0; b < n; ++b) {
    const int idx = indices[static_cast<std::size_t>(b)];
    if (idx < 0 || idx >= size()) throw std::out_of_range("example index " + std::to_string(idx));
    const float* src = pixels_.data() + static_cast<std::size_t>(idx) * channels_ * hw;
    for (int c = 0; c < channels_; ++c) {
      std::copy_n(src + static_cast<std::size_t>(c) * hw, hw,
                  out.data() + (static_cast<std::size_t>(c) * n + b) * hw);
    }
  }
  return out;
}

std::vector<int> Dataset::labels(std::span<const int> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int idx : indices) out.push_back(labels_.at(static_cast<std::size_t>(idx)));
  return out;
}

namespace {

std::vector<int> iota_range(int begin, int count) {
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = begin + i;
  return idx;
}

struct Teacher {
  Tensor<float> w1, b1, w2, b2, w3, b3, head, head_bias;
};

Tensor<float> normal_tensor(const compute::Shape& shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<float> t(shape);
  for (auto& v : t.storage()) v = static_cast<float>(dist(rng));
  return t;
}

Teacher make_teacher(const DatasetConfig& cfg, std::mt19937_64& rng) {
  const int w = cfg.teacher_width;
  Teacher t;
  t.w1 = normal_tensor({w, cfg.channels, 3, 3}, std::sqrt(2.0 / (cfg.channels * 9)), rng);
  t.b1 = normal_tensor({w}, 0.1, rng);
  t.w2 = normal_tensor({w, w, 3, 3}, std::sqrt(2.0 / (w * 9)), rng);
  t.b2 = normal_tensor({w}, 0.1, rng);
  t.w3 = normal_tensor({w, w, 3, 3}, std::sqrt(2.0 / (w * 9)), rng);
  t.b3 = normal_tensor({w}, 0.1, rng);
  t.head = normal_tensor({w, cfg.num_classes}, std::sqrt(1.0 / w), rng);
  t.head_bias = Tensor<float>({cfg.num_classes});
  return t;
}

// Returns the smoothed images {C, n, H, W} and teacher logits {n, classes}.
std::pair<Tensor<float>, Tensor<float>> draw_chunk(const DatasetConfig& cfg, const Teacher& teacher, int n,
                                                   std::mt19937_64& rng) {
  Tape<float> tape;
  auto raw = tape.constant(normal_tensor({cfg.channels, n, cfg.image_size, cfg.image_size}, 3.0, rng));
  auto images = ops::avg_pool3x3(raw);
  auto h = ops::relu(ops::conv2d(images, tape.constant(teacher.w1), tape.constant(teacher.b1)));
  h = ops::relu(ops::conv2d(h, tape.constant(teacher.w2), tape.constant(teacher.b2)));
  if (cfg.image_size % 2 == 0) h = ops::avg_pool2x2(h);
  h = ops::relu(ops::conv2d(h, tape.constant(teacher.w3), tape.constant(teacher.b3)));
  auto logits = ops::add_bias(ops::matmul(ops::global_avg_pool(h), tape.constant(teacher.head)),
                              tape.constant(teacher.head_bias));
  return {images.value(), logits.value()};
}

std::vector<int> quotas(int total, int classes) {
  std::vector<int> q(static_cast<std::size_t>(classes), total / classes);
  for (int c = 0; c < total % classes; ++c) ++q[static_cast<std::size_t>(c)];
  return q;
}

}  // namespace

Tensor<float> Dataset::images(int begin, int count) const {
  const auto idx = iota_range(begin, count);
  return images(std::span<const int>(idx));
}

std::vector<int> Dataset::labels(int begin, int count) const {
  const auto idx = iota_range(begin, count);
  return labels(std::span<const int>(idx));
}

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(num_classes_), 0);
  for (int l : labels_) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

SyntheticTask make_synthetic_task(const DatasetConfig& cfg) {
  if (cfg.image_size < 2 || cfg.channels < 1 || cfg.num_classes < 2 || cfg.train_size < 1 || cfg.val_size < 1) {
    throw std::invalid_argument("invalid synthetic dataset config " + cfg.id());
  }
  std::mt19937_64 rng(cfg.seed);
  Teacher teacher = make_teacher(cfg, rng);
  const int k = cfg.num_classes;
  constexpr int kChunk = 256;

  // Calibrate per-class offsets on a probe pool so the argmax labels are
  // roughly balanced; the quotas below then make them exactly balanced.
  {
    std::mt19937_64 probe_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    auto [unused, logits] = draw_chunk(cfg, teacher, 8 * kChunk, probe_rng);
    const int n = logits.dim(0);
    double spread = 0.0;
    for (float v : logits.values()) spread += static_cast<double>(v) * v;
    spread = std::sqrt(spread / logits.size());
    std::vector<double> bias(static_cast<std::size_t>(k), 0.0);
    for (int it = 0; it < 300; ++it) {
      std::vector<double> freq(static_cast<std::size_t>(k), 0.0);
      for (int r = 0; r < n; ++r) {
        int best = 0;
        for (int c = 1; c < k; ++c) {
          if (logits[static_cast<std::size_t>(r) * k + c] + bias[static_cast<std::size_t>(c)] >
              logits[static_cast<std::size_t>(r) * k + best] + bias[static_cast<std::size_t>(best)]) {
            best = c;
          }
        }
        freq[static_cast<std::size_t>(best)] += 1.0 / n;
      }
      for (int c = 0; c < k; ++c) bias[static_cast<std::size_t>(c)] -= spread * (freq[static_cast<std::size_t>(c)] - 1.0 / k);
    }
    for (int c = 0; c < k; ++c) teacher.head_bias[static_cast<std::size_t>(c)] = static_cast<float>(bias[static_cast<std::size_t>(c)]);
  }

  SyntheticTask task{Dataset(cfg.channels, cfg.image_size, k), Dataset(cfg.channels, cfg.image_size, k)};
  auto train_left = quotas(cfg.train_size, k);
  auto val_left = quotas(cfg.val_size, k);
  int remaining = cfg.train_size + cfg.val_size;
  const int hw = cfg.image_size * cfg.image_size;
  std::vector<float> image(static_cast<std::size_t>(cfg.channels) * hw);
  long drawn = 0;
  const long max_draws = 200L * (cfg.train_size + cfg.val_size) + 100000L;
  while (remaining > 0) {
    if (drawn > max_draws) throw std::runtime_error("teacher never produces some classes; cannot balance " + cfg.id());
    auto [images, logits] = draw_chunk(cfg, teacher, kChunk, rng);
    drawn += kChunk;
    for (int r = 0; r < kChunk && remaining > 0; ++r) {
      const int label = ops::argmax_row(logits, r);
      auto& tq = train_left[static_cast<std::size_t>(label)];
      auto& vq = val_left[static_cast<std::size_t>(label)];
      if (tq == 0 && vq == 0) continue;
      for (int c = 0; c < cfg.channels; ++c) {
        std::copy_n(images.data() + (static_cast<std::size_t>(c) * kChunk + r) * hw, hw,
                    image.data() + static_cast<std::size_t>(c) * hw);
      }
      if (tq > 0) {
        task.train.push_back(image, label);
        --tq;
      } else {
        task.val.push_back(image, label);
        --vq;
      }
      --remaining;
    }
  }
  return task;
}

}  // namespace closenas

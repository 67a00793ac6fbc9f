#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>

#include "closenas/compute/autodiff.hpp"

namespace closenas::compute {

/// Raised when a gradient or loss stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Classic momentum SGD with L2 weight decay folded into the gradient:
///   v <- m * v + (g + wd * p);  p <- p - lr * v
/// Only parameters that received a gradient in the last backward pass move.
template <typename T>
class Sgd {
 public:
  explicit Sgd(SgdConfig config = {}) : config_(config), lr_(config.lr) {
    if (!(config.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  }

  void step(std::span<Parameter<T>* const> params);

  double lr() const noexcept { return lr_; }
  void set_lr(double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    lr_ = lr;
  }
  const SgdConfig& config() const noexcept { return config_; }

  /// Momentum buffers keyed by parameter name.
  std::map<std::string, Tensor<T>>& buffers() noexcept { return buffers_; }
  const std::map<std::string, Tensor<T>>& buffers() const noexcept { return buffers_; }

 private:
  SgdConfig config_;
  double lr_;
  std::map<std::string, Tensor<T>> buffers_;
};

/// Global L2 norm over every parameter holding a gradient; scales all of
/// them by max_norm / norm when the norm exceeds max_norm. Returns the
/// pre-clipping norm.
template <typename T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm);

/// Halves the rate each time the monitored metric fails to improve for
/// `patience` consecutive epochs.
class PlateauSchedule {
 public:
  PlateauSchedule(double initial_lr, int patience, double factor = 0.5, double min_lr = 1e-8);

  /// Feeds one epoch's metric and returns the rate to use next.
  double observe(double metric);
  /// Restores the initial rate and forgets all history.
  void restart();

  double lr() const noexcept { return lr_; }
  double initial_lr() const noexcept { return initial_; }
  int stall_count() const noexcept { return stall_; }
  bool has_best() const noexcept { return has_best_; }
  double best() const noexcept { return best_; }
  int patience() const noexcept { return patience_; }

  // Raw state access for checkpointing.
  void set_state(double lr, int stall, bool has_best, double best);

 private:
  double initial_;
  int patience_;
  double factor_;
  double min_lr_;
  double lr_;
  int stall_ = 0;
  bool has_best_ = false;
  double best_ = 0.0;
};

/// Cosine decay from lr_max at epoch 0 to lr_min at `total_epochs`,
/// never below `floor`.
double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min, double floor = 1e-8);

enum class ScheduleKind { plateau, cosine };

struct ScheduleConfig {
  double initial_lr = 0.05;
  int patience = 30;
  double factor = 0.5;
  double final_lr = 0.0;
  int total_epochs = 1;
  double floor = 1e-8;
};

/// Closed-form value of a schedule. For `plateau`, `stalled_windows` is the
/// number of completed stall windows seen so far.
double lr_schedule_value(ScheduleKind kind, int epoch, const ScheduleConfig& config, int stalled_windows = 0);

}  // namespace closenas::compute

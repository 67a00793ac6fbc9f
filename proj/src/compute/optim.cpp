#include "closenas/compute/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace closenas::compute {

template <typename T>
void Sgd<T>::step(std::span<Parameter<T>* const> params) {
  for (const Parameter<T>* p : params) {
    if (!p->has_grad) continue;
    for (T g : p->grad.values()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw DivergenceError("non-finite gradient in parameter '" + p->name + "'");
      }
    }
  }
  const T lr = static_cast<T>(lr_);
  const T m = static_cast<T>(config_.momentum);
  const T wd = static_cast<T>(config_.weight_decay);
  for (Parameter<T>* p : params) {
    if (!p->has_grad || !p->requires_grad) continue;
    auto [it, inserted] = buffers_.try_emplace(p->name, p->value.shape());
    Tensor<T>& v = it->second;
    if (!v.same_shape(p->value)) throw std::logic_error("momentum buffer shape drifted for '" + p->name + "'");
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = m * v[i] + (p->grad[i] + wd * p->value[i]);
      p->value[i] -= lr * v[i];
    }
  }
}

template <typename T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter<T>* p : params) {
    if (!p->has_grad) continue;
    for (T g : p->grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (Parameter<T>* p : params) {
      if (!p->has_grad) continue;
      for (T& g : p->grad.storage()) g *= s;
    }
  }
  return norm;
}

PlateauSchedule::PlateauSchedule(double initial_lr, int patience, double factor, double min_lr)
    : initial_(initial_lr), patience_(patience), factor_(factor), min_lr_(min_lr), lr_(initial_lr) {
  if (!(initial_lr > 0.0)) throw std::invalid_argument("initial learning rate must be positive");
  if (patience < 1) throw std::invalid_argument("plateau patience must be >= 1");
}

double PlateauSchedule::observe(double metric) {
  if (!has_best_ || metric > best_) {
    has_best_ = true;
    best_ = metric;
    stall_ = 0;
    return lr_;
  }
  if (++stall_ >= patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    stall_ = 0;
  }
  return lr_;
}

void PlateauSchedule::restart() {
  lr_ = initial_;
  stall_ = 0;
  has_best_ = false;
  best_ = 0.0;
}

void PlateauSchedule::set_state(double lr, int stall, bool has_best, double best) {
  lr_ = lr;
  stall_ = stall;
  has_best_ = has_best;
  best_ = best;
}

double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min, double floor) {
  const double frac = total_epochs <= 0 ? 1.0 : std::clamp(static_cast<double>(epoch) / total_epochs, 0.0, 1.0);
  const double v = lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
  return std::max(v, floor);
}

double lr_schedule_value(ScheduleKind kind, int epoch, const ScheduleConfig& config, int stalled_windows) {
  if (kind == ScheduleKind::cosine) {
    return cosine_lr(epoch, config.total_epochs, config.initial_lr, config.final_lr, config.floor);
  }
  return std::max(config.initial_lr * std::pow(config.factor, stalled_windows), config.floor);
}

template class Sgd<float>;
template class Sgd<double>;
template double clip_grad_norm<float>(std::span<Parameter<float>* const>, double);
template double clip_grad_norm<double>(std::span<Parameter<double>* const>, double);

}  // namespace closenas::compute

#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "closenas/compute/tensor.hpp"

namespace closenas::compute {

/// A learnable array. `grad` is only meaningful while `has_grad` is set;
/// parameters that a backward pass never reached are skipped by the optimizer.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = true;
  bool has_grad = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() {
    has_grad = false;
    if (!grad.same_shape(value)) {
      grad = Tensor<T>(value.shape());
    } else {
      grad.fill(T(0));
    }
  }
};

template <typename T>
class Tape;

/// Handle to a node on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  int id() const noexcept { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
/// sweep is a valid topological order for the backward pass.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  /// With gradients disabled nothing is recorded for the backward pass.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  Var<T> parameter(Parameter<T>& p) { return push(p.value, grad_enabled_ && p.requires_grad, &p, {}); }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || nodes_[static_cast<std::size_t>(v.id())].needs_grad;
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : Backward{});
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward backward) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || nodes_[static_cast<std::size_t>(v.id())].needs_grad;
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : Backward{});
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  bool has_grad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<T>& grad(int id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (node.grad.empty() && !node.value.empty()) node.grad = Tensor<T>(node.value.shape());
    return node.grad;
  }

  /// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
  void backward(Var<T> root) {
    if (root.value().size() != 1) throw std::invalid_argument("backward root must be a scalar");
    grad(root.id())[0] = T(1);
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      auto& node = nodes_[static_cast<std::size_t>(id)];
      if (!node.needs_grad || node.grad.empty()) continue;
      if (node.param != nullptr) {
        auto& p = *node.param;
        if (!p.has_grad) {
          if (!p.grad.same_shape(p.value)) p.grad = Tensor<T>(p.value.shape());
          else p.grad.fill(T(0));
          p.has_grad = true;
        }
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += node.grad[i];
      } else if (node.backward) {
        node.backward(*this, id);
      }
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };

  Var<T> push(Tensor<T> value, bool needs, Parameter<T>* param, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, std::move(backward), param, needs});
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace closenas::compute

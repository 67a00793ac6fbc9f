#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "closenas/compute/autodiff.hpp"
#include "closenas/compute/ops.hpp"

namespace testing {

using closenas::compute::Parameter;
using closenas::compute::Shape;
using closenas::compute::Tape;
using closenas::compute::Tensor;
using closenas::compute::Var;

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(shape);
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

/// Scalar built from `v` with fixed random weights, so every output entry
/// reaches the loss with a distinct coefficient.
inline Var<double> probe_loss(Var<double> v, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  auto w = v.tape().constant(random_tensor(v.shape(), rng));
  return closenas::compute::sum_all(closenas::compute::mul(v, w));
}

using LossFn = std::function<Var<double>(Tape<double>&)>;

/// Largest per-parameter relative error ||g_analytic - g_fd|| / (||g_analytic|| + ||g_fd||)
/// with central differences. Parameters with both norms below 1e-10 count as 0.
inline double gradient_error(const std::vector<Parameter<double>*>& params, const LossFn& loss, double step = 1e-3) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  double worst = 0.0;
  for (auto* p : params) {
    const Tensor<double> analytic = p->has_grad ? p->grad : Tensor<double>(p->value.shape());
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      Tape<double> up(false);
      const double fp = loss(up).value()[0];
      p->value[i] = orig - step;
      Tape<double> down(false);
      const double fm = loss(down).value()[0];
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2 * step);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    const double denom = std::sqrt(na) + std::sqrt(nn);
    if (denom < 1e-10) continue;
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

}  // namespace testing

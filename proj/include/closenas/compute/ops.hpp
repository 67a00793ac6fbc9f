#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "closenas/compute/autodiff.hpp"

namespace closenas::compute {

/// The differentiable op set every trainable module is built from.
/// Feature maps are {C, N, H, W}; matrices are {rows, cols}.
std::vector<std::string> required_ops();

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> add_n(const std::vector<Var<T>>& terms);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
/// Multiplies every element of `a` by the single-element `s`.
template <typename T> Var<T> scale(Var<T> a, Var<T> s);
template <typename T> Var<T> scale_const(Var<T> a, T c);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a {m, n} + bias {n} broadcast over rows.
template <typename T> Var<T> add_bias(Var<T> a, Var<T> bias);
/// Row-wise softmax of a {m, n} matrix.
template <typename T> Var<T> softmax(Var<T> a);
/// Mean cross-entropy of row-wise logits against integer labels; returns {1}.
template <typename T> Var<T> cross_entropy(Var<T> logits, std::span<const int> labels);

/// Stride-1 same-padded convolution. x {Ci, N, H, W}, w {Co, Ci, k, k}, b {Co}; k in {1, 3}.
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b);
/// 3x3 stride-1 average pooling, same padding, padded cells excluded from the count.
template <typename T> Var<T> avg_pool3x3(Var<T> x);
/// 2x2 stride-2 average pooling (H and W must be even).
template <typename T> Var<T> avg_pool2x2(Var<T> x);
/// {C, N, H, W} -> {N, C}.
template <typename T> Var<T> global_avg_pool(Var<T> x);
/// Normalizes each channel with the statistics of the current batch (no affine).
template <typename T> Var<T> batch_norm(Var<T> x, T eps = T(1e-5));
template <typename T> Var<T> dropout(Var<T> a, double p, std::mt19937_64& rng);

/// Forward value is `hard`; the backward pass routes the gradient into `relaxed`.
template <typename T> Var<T> straight_through(Var<T> relaxed, const Tensor<T>& hard);
/// Single element (flat index) as a {1} node.
template <typename T> Var<T> select(Var<T> a, int index);
/// Row `index` of a {r, c} matrix as {1, c}.
template <typename T> Var<T> row(Var<T> table, int index);
/// Concatenates two {1, n} / {1, m} rows into {1, n + m}.
template <typename T> Var<T> concat_cols(Var<T> a, Var<T> b);
template <typename T> Var<T> sum_all(Var<T> a);

/// Zero-filled constant with the given shape.
template <typename T> Var<T> zeros(Tape<T>& tape, const Shape& shape);

/// Column of the largest entry in row r of a {m, n} matrix (lowest index on ties).
template <typename T> int argmax_row(const Tensor<T>& m, int r);
/// Number of rows whose argmax matches the label.
template <typename T> int count_correct(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace closenas::compute

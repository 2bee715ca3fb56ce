#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fci/tensor.hpp"

namespace fci::ops {

// Every op evaluates eagerly. When the graph is enabled and an input requires
// grad, a backward record is appended to the graph.

// ---- linear algebra -------------------------------------------------------

/// a[m x k] * b[k x n]
template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
/// a[m x k] * b[n x k]^T
template <typename T>
Tensor<T> matmul_nt(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
/// a[k x m]^T * b[k x n]
template <typename T>
Tensor<T> matmul_tn(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

// ---- elementwise ------------------------------------------------------------

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& a, T factor);
/// x[m x n] + bias[n] broadcast over rows.
template <typename T>
Tensor<T> add_bias(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> silu(Graph<T>& g, const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x);
template <typename T>
Tensor<T> softplus(Graph<T>& g, const Tensor<T>& x);
template <typename T>
Tensor<T> exp(Graph<T>& g, const Tensor<T>& x);
/// elu(x) + 1, the positive feature map of kernelised attention.
template <typename T>
Tensor<T> elu_plus_one(Graph<T>& g, const Tensor<T>& x);

// ---- reductions and normalisation -------------------------------------------

/// Row-wise softmax with max subtraction. With `causal`, row i only spans
/// columns 0..i and the remaining entries are exactly zero.
template <typename T>
Tensor<T> softmax_rows(Graph<T>& g, const Tensor<T>& m, bool causal = false);

/// -log softmax(logits)[target] over all elements of `logits`. Indices listed in
/// `excluded` behave as -inf logits: zero probability and zero gradient.
template <typename T>
Tensor<T> cross_entropy(Graph<T>& g, const Tensor<T>& logits, std::size_t target,
                        std::span<const std::size_t> excluded = {});

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x);
template <typename T>
Tensor<T> mean(Graph<T>& g, const Tensor<T>& x);
/// Column sums of x[m x n] as a [1 x n] row.
template <typename T>
Tensor<T> col_sums(Graph<T>& g, const Tensor<T>& x);
/// x[m x n] with row i divided by max(den[i], floor).
template <typename T>
Tensor<T> div_rows(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& den, T floor);

/// Per-row RMS normalisation followed by an elementwise scale and shift.
template <typename T>
Tensor<T> rms_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                   T eps = T(1e-6));

// ---- layout ------------------------------------------------------------------

/// Rows of `table` selected by `indices` (embedding lookup / key gather).
template <typename T>
Tensor<T> gather_rows(Graph<T>& g, const Tensor<T>& table, std::span<const std::size_t> indices);
template <typename T>
Tensor<T> row(Graph<T>& g, const Tensor<T>& x, std::size_t i);
template <typename T>
Tensor<T> concat_cols(Graph<T>& g, std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> slice_cols(Graph<T>& g, const Tensor<T>& x, std::size_t start, std::size_t count);
template <typename T>
Tensor<T> reverse_rows(Graph<T>& g, const Tensor<T>& x);

// ---- sequence ops ------------------------------------------------------------

/// Per-channel 1-D convolution of x[L x d] with kernel[w x d].
///
/// Causal: y[t] = sum_i kernel[i] * x[t - i] with zeros before the start.
/// Non-causal: centred taps y[t] = sum_i kernel[i] * x[t + (w-1)/2 - i]; w must be odd.
template <typename T>
Tensor<T> depthwise_conv1d(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& kernel, bool causal);

enum class PoolMethod { mean, max };

/// Pools consecutive groups of `width` rows; the last group may be short.
template <typename T>
Tensor<T> segment_pool(Graph<T>& g, const Tensor<T>& x, std::size_t width, PoolMethod method);

}  // namespace fci::ops

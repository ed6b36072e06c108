#pragma once

// Forward and adjoint numerical primitives over Tensor<T>.
//
// The compute-heavy kernels (batched matmul and the three convolution
// passes) come in a serial reference flavour and an OpenMP flavour. Both
// evaluate each output element with the same reduction order, so their
// results are bit-identical; the parallel flavour only splits independent
// output rows across threads.

#include <cstdint>
#include <span>
#include <vector>

#include "aacv/tensor.hpp"

namespace aacv {

enum class Execution { Serial, Parallel };

/// Selects the flavour used by the dispatching kernels below.
void set_execution(Execution e);
Execution execution();
/// True when the library was built with OpenMP.
bool parallel_available();

/// 'same' padding geometry for one spatial axis (zero padding, extra cell
/// at the trailing edge when the total is odd).
struct SamePadding {
  std::size_t out;
  std::size_t before;
};
SamePadding same_padding(std::size_t in, std::size_t kernel, std::size_t stride);

namespace serial {
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                         bool transpose_b = false);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride);
template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& dy, const Tensor<T>& w, const Shape& x_shape,
                            std::size_t stride);
template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Tensor<T>& dy, const Shape& w_shape,
                             std::size_t stride);
}  // namespace serial

namespace parallel {
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                         bool transpose_b = false);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride);
template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& dy, const Tensor<T>& w, const Shape& x_shape,
                            std::size_t stride);
template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Tensor<T>& dy, const Shape& w_shape,
                             std::size_t stride);
}  // namespace parallel

// Dispatching entry points; (m x n) operands live in the last two axes and
// the leading axes of a and b must agree. Convolution weights are
// (k, k, C_in, C_out) with no bias.
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                         bool transpose_b = false);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride);
template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& dy, const Tensor<T>& w, const Shape& x_shape,
                            std::size_t stride);
template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Tensor<T>& dy, const Shape& w_shape,
                             std::size_t stride);

/// Plain 2-D product: (m x n) * (n x p).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Softmax over the last axis with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);
template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy);

/// 3x3 average pooling, stride 2, 'same' padding; padded cells are excluded
/// from the average.
template <typename T>
Tensor<T> avg_pool_3x3_s2(const Tensor<T>& x);
template <typename T>
Tensor<T> avg_pool_3x3_s2_backward(const Tensor<T>& dy, const Shape& x_shape);

/// Half-pixel-centre bilinear resize.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);
template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& dy, const Shape& x_shape);

template <typename T>
struct BatchStats {
  std::vector<T> mean;
  std::vector<T> var;  // biased
};

template <typename T>
BatchStats<T> channel_stats(const Tensor<T>& x);

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, per channel (last axis).
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                    std::span<const T> mean, std::span<const T> var, T eps);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// (B,H,W,C) -> (B,C)
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// (B,in) * (in,out) + bias(out)
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// Mean softmax cross-entropy over the batch, log-sum-exp stabilised.
template <typename T>
T cross_entropy_with_logits(const Tensor<T>& logits, std::span<const int> labels);

// Layout helpers.
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);
template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t len);
/// Zero-extends x along `axis` so it has length `new_len` (trailing zeros).
template <typename T>
Tensor<T> pad_trailing(const Tensor<T>& x, std::size_t axis, std::size_t new_len);
/// Inserts a new axis at `axis` and repeats the tensor `reps` times along it.
template <typename T>
Tensor<T> expand_tile(const Tensor<T>& x, std::size_t axis, std::size_t reps);
/// Sums out `axis` (adjoint of expand_tile).
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& x);

template <typename T, typename U>
Tensor<T> cast(const Tensor<U>& x) {
  std::vector<T> data(x.data().begin(), x.data().end());
  return Tensor<T>(x.shape(), std::move(data));
}

}  // namespace aacv

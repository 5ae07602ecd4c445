#pragma once

#include <span>
#include <vector>

#include "dida/tensor.hpp"

namespace dida {

struct ConvOpts {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

// y = a + b, same shape (also used for scalar losses and residual fusion).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// x: (N,Cin), w: (Cout,Cin), b: (Cout) or undefined -> (N,Cout)
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// x: (N,Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout) or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const ConvOpts& opts = {});

// Per-sample depthwise convolution: every sample carries its own kernel bank.
// x: (N,C,H,W), kernels: (N,C,kh,kw) -> (N,C,H',W'), stride 1, no bias.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernels,
                           int pad, int dilation);

// 2x2 window, stride 2, floor semantics on odd extents.
template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& x);

// (N,C,H,W) -> (N,C,1,1)
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// Batch norm over (N,H,W) per channel. Training mode normalizes with biased
// batch variance and updates running stats in place (unbiased variance,
// new = (1-momentum)*old + momentum*batch). Eval mode uses running stats.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, bool training,
                       double momentum = 0.1, double eps = 1e-5);

// Materializing reshape (same numel).
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Transpose of two axes, materialized.
template <typename T>
Tensor<T> swap_axes(const Tensor<T>& x, int a, int b);

// Concatenate along axis 1; all other dims must match.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);

// Prepend a batch axis of size n by tiling; backward sums over the tile.
template <typename T>
Tensor<T> broadcast_batch(const Tensor<T>& x, int64_t n);

// Row-wise softmax on (N,K).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

// sum_i w[i] * x_flat[i] -> scalar. The reduction used by gradient checks.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> w);

// Mean or weighted cross entropy on (N,K) logits. Empty weights mean 1/N per
// sample; otherwise loss = sum_i weights[i] * CE_i (caller bakes any 1/B in).
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                std::span<const int> labels,
                                std::span<const T> sample_weights = {});

// Style mixing on (N,C,H,W): per-sample channel statistics are mixed with a
// permuted partner's; the statistics are treated as constants in backward.
template <typename T>
Tensor<T> mixstyle(const Tensor<T>& x, std::span<const T> lambda,
                   std::span<const int64_t> perm, double eps = 1e-6);

}  // namespace dida

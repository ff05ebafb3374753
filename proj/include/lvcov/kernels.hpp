#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lvcov/tensor.hpp"

namespace lvcov {

using Rng = std::mt19937_64;

/// Per-axis triple in (depth, height, width) order.
struct Extent3 {
  std::size_t d = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  friend bool operator==(const Extent3&, const Extent3&) = default;
};

/// Valid-mode output length of a sliding window.
std::size_t window_output(std::size_t input, std::size_t window, std::size_t stride);

// ---------------------------------------------------------------------------
// 3D convolution
//
// input   [D, H, W, Cin]
// kernels [Cout, Cin, KD, KH, KW]
// bias    [Cout]
// output  [D', H', W', Cout], no padding, activation applied by the caller.
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias,
                              Extent3 stride);

template <typename T>
struct ConvGradients {
  BasicTensor<T> input;  // empty when not requested
  BasicTensor<T> kernels;
  BasicTensor<T> bias;
};

template <typename T>
ConvGradients<T> conv3d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                 const BasicTensor<T>& kernels, Extent3 stride, bool want_input_grad = true);

// ---------------------------------------------------------------------------
// 3D max pooling, per channel over the (D, H, W) axes of a [D, H, W, C] input
// ---------------------------------------------------------------------------

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  /// Flat input index of each output's winner; ties go to the first element
  /// of the window in row-major order.
  std::vector<std::size_t> argmax;
};

template <typename T>
PoolResult<T> maxpool3d_forward(const BasicTensor<T>& input, Extent3 window, Extent3 stride);

template <typename T>
BasicTensor<T> maxpool3d_backward(const BasicTensor<T>& grad_out, std::span<const std::size_t> argmax,
                                  const Shape& input_shape);

// ---------------------------------------------------------------------------
// Element-wise activations
// ---------------------------------------------------------------------------

template <typename T>
void relu_inplace(BasicTensor<T>& x);

template <typename T>
BasicTensor<T> relu(BasicTensor<T> x) {
  relu_inplace(x);
  return x;
}

/// grad where x > 0, else 0. The post-activation output can stand in for x.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad, const BasicTensor<T>& x);

/// Logistic function in branch-stable form, clamped to the open interval
/// [smallest normal, 1 - eps/2] so that log(a) and log(1 - a) stay finite.
template <typename T>
T sigmoid(T z);

// ---------------------------------------------------------------------------
// Dense layer: y = W x + b with W [m, n]
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& bias);

template <typename T>
struct DenseGradients {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

template <typename T>
DenseGradients<T> dense_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x,
                                 const BasicTensor<T>& weights);

// ---------------------------------------------------------------------------
// Inverted dropout
// ---------------------------------------------------------------------------

/// Each element is 1/(1 - rate) with probability 1 - rate, else 0.
template <typename T>
BasicTensor<T> dropout_mask(const Shape& shape, double rate, Rng& rng);

}  // namespace lvcov

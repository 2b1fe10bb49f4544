#pragma once

#include <cstddef>

#include "pfsa/tape.hpp"
#include "pfsa/tensor.hpp"

namespace pfsa {

/// [m×k]·[k×n] matrix product.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Output extent of a strided, padded window; ConfigError when it is not a positive integer.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Cross-correlation of x [C_in×H×W] with kernels [C_out×C_in×kh×kw] plus per-channel bias.
LayerOutput conv2d_forward(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
                           std::size_t pad);

struct Conv2dGrads {
  Tensor input;
  Tensor kernels;
  Tensor bias;
};

Conv2dGrads conv2d_backward(const LayerTape& tape, const Tensor& grad_out);

LayerOutput relu_forward(const Tensor& x);
/// Gradient is passed only where the forward input was strictly positive.
Tensor relu_backward(const LayerTape& tape, const Tensor& grad_out);

/// Affine map w·x + b, with x of length d, w [c×d] and b of length c.
LayerOutput fc_forward(const Tensor& x, const Tensor& weights, const Tensor& bias);

struct FcGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

FcGrads fc_backward(const LayerTape& tape, const Tensor& grad_out);

/// Non-overlapping 2×2 mean pooling over C×H×W; a trailing odd row/column is dropped.
LayerOutput avg_pool2_forward(const Tensor& x);
Tensor avg_pool2_backward(const LayerTape& tape, const Tensor& grad_out);

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Softmax cross-entropy of a logit vector against a class index.
CrossEntropy softmax_ce(const Tensor& logits, std::size_t label);

/// Numerically stable softmax of a flat vector (max subtracted before exponentiation).
std::vector<double> stable_softmax(std::span<const double> values);

}  // namespace pfsa

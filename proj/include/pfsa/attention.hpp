#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pfsa/tape.hpp"
#include "pfsa/tensor.hpp"

namespace pfsa {

/// Per-position importance weights of a feature map.
///
/// `weights` is the softmax over all H·W positions of `channel_sum`, the per-position sum of
/// activations across channels. The weights are strictly positive and sum to one.
struct AttentionMap {
  Tensor weights;      // p, H×W
  Tensor channel_sum;  // A, H×W
};

struct AttentionOutput {
  Tensor out;  // F = f ⊙ p broadcast over channels
  AttentionMap map;
  LayerTape tape;
};

/// Channel-sum softmax over positions without rescaling the map.
AttentionMap attention_map(const Tensor& features);

/// Parameter-free spatial attention: every channel of f [C×H×W] is rescaled per position by p.
AttentionOutput sa_forward(const Tensor& features);

/// Exact gradient of sa_forward.
///
/// With q(i,j) = Σ_k g_k(i,j)·f_k(i,j), the three cases of ∂F/∂f contract to
///   grad_f_t(m,n) = p(m,n)·g_t(m,n) + p(m,n)·q(m,n) − p(m,n)·Σ_{i,j} q(i,j)·p(i,j).
Tensor sa_backward(const LayerTape& tape, const Tensor& grad_out);

/// Largest C·H·W for which sa_jacobian will materialise the dense matrix.
inline constexpr std::size_t kMaxJacobianSide = 4096;

/// Dense Jacobian J[(k,i,j),(t,m,n)] = ∂F_k(i,j)/∂f_t(m,n), evaluated case by case.
Tensor sa_jacobian(const Tensor& features);

/// Global pooling of each channel to one scalar, either the mean or the plain sum over positions.
LayerOutput gap_forward(const Tensor& features, PoolMode mode = PoolMode::mean);
Tensor gap_backward(const LayerTape& tape, const Tensor& grad_pooled);

/// Row range [begin, end) of stripe `index` when `height` rows are split into `parts` stripes.
struct StripeBounds {
  std::size_t begin = 0;
  std::size_t end = 0;
};
StripeBounds stripe_bounds(std::size_t height, std::size_t parts, std::size_t index);

struct StripeOutput {
  std::vector<Tensor> parts;  // `parts` vectors of length C
  LayerTape tape;
};

/// Splits the height axis into contiguous horizontal stripes and mean-pools each one.
StripeOutput stripe_pool(const Tensor& features, std::size_t parts);
Tensor stripe_pool_backward(const LayerTape& tape, std::span<const Tensor> grad_parts);

}  // namespace pfsa

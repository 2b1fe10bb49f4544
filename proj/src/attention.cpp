#include "pfsa/attention.hpp"

#include <string>

#include "pfsa/errors.hpp"
#include "pfsa/layers.hpp"

namespace pfsa {

AttentionMap attention_map(const Tensor& features) {
  require_rank(features, 3, "spatial attention input");
  if (!features.all_finite()) throw ContractError("spatial attention input contains non-finite values");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  Tensor channel_sum({h, w});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) channel_sum(i, j) += features(k, i, j);
    }
  }
  Tensor weights({h, w}, stable_softmax(channel_sum.data()));
  return {std::move(weights), std::move(channel_sum)};
}

AttentionOutput sa_forward(const Tensor& features) {
  AttentionMap map = attention_map(features);
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  Tensor out = features;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) out(k, i, j) *= map.weights(i, j);
    }
  }
  LayerTape tape(AttentionState{features, map.weights});
  return {std::move(out), std::move(map), std::move(tape)};
}

Tensor sa_backward(const LayerTape& tape, const Tensor& grad_out) {
  const auto& st = tape.as<AttentionState>();
  const Tensor& f = st.input;
  const Tensor& p = st.weights;
  require_same_shape(grad_out.shape(), f.shape(), "sa_backward grad_out");
  const std::size_t c = f.dim(0), h = f.dim(1), w = f.dim(2);

  Tensor q({h, w});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) q(i, j) += grad_out(k, i, j) * f(k, i, j);
    }
  }
  double qp = 0.0;
  for (std::size_t n = 0; n < q.size(); ++n) qp += q[n] * p[n];

  Tensor shared({h, w});
  for (std::size_t n = 0; n < q.size(); ++n) shared[n] = p[n] * (q[n] - qp);

  Tensor grad(f.shape());
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) grad(k, i, j) = p(i, j) * grad_out(k, i, j) + shared(i, j);
    }
  }
  return grad;
}

Tensor sa_jacobian(const Tensor& features) {
  require_rank(features, 3, "sa_jacobian input");
  const std::size_t n = features.size();
  if (n > kMaxJacobianSide) {
    throw ConfigError("sa_jacobian: " + std::to_string(n) + " entries per side exceeds the limit of " +
                      std::to_string(kMaxJacobianSide));
  }
  const Tensor p = attention_map(features).weights;
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  Tensor jac({n, n});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t row = (k * h + i) * w + j;
        const double fk = features(k, i, j);
        const double pij = p(i, j);
        for (std::size_t t = 0; t < c; ++t) {
          for (std::size_t m = 0; m < h; ++m) {
            for (std::size_t nn = 0; nn < w; ++nn) {
              const std::size_t col = (t * h + m) * w + nn;
              double value;
              if (i == m && j == nn) {
                value = fk * pij * (1.0 - pij);
                if (k == t) value += pij;
              } else {
                value = -fk * pij * p(m, nn);
              }
              jac(row, col) = value;
            }
          }
        }
      }
    }
  }
  return jac;
}

LayerOutput gap_forward(const Tensor& features, PoolMode mode) {
  require_rank(features, 3, "gap_forward input");
  const std::size_t c = features.dim(0), hw = features.dim(1) * features.dim(2);
  Tensor pooled({c});
  const auto data = features.data();
  for (std::size_t k = 0; k < c; ++k) {
    double acc = 0.0;
    for (std::size_t n = 0; n < hw; ++n) acc += data[k * hw + n];
    pooled[k] = mode == PoolMode::mean ? acc / static_cast<double>(hw) : acc;
  }
  return {std::move(pooled), LayerTape(GlobalPoolState{features.shape(), mode})};
}

Tensor gap_backward(const LayerTape& tape, const Tensor& grad_pooled) {
  const auto& st = tape.as<GlobalPoolState>();
  const std::size_t c = st.input_shape[0], hw = st.input_shape[1] * st.input_shape[2];
  require_same_shape(grad_pooled.shape(), Shape{c}, "gap_backward grad");
  Tensor grad(st.input_shape);
  auto data = grad.data();
  const double scale = st.mode == PoolMode::mean ? 1.0 / static_cast<double>(hw) : 1.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double v = grad_pooled[k] * scale;
    for (std::size_t n = 0; n < hw; ++n) data[k * hw + n] = v;
  }
  return grad;
}

StripeBounds stripe_bounds(std::size_t height, std::size_t parts, std::size_t index) {
  return {index * height / parts, (index + 1) * height / parts};
}

StripeOutput stripe_pool(const Tensor& features, std::size_t parts) {
  require_rank(features, 3, "stripe_pool input");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (parts == 0 || parts > h) {
    throw ConfigError("stripe_pool: " + std::to_string(parts) + " stripes requested for a feature map of height " +
                      std::to_string(h));
  }
  StripeOutput result;
  result.parts.reserve(parts);
  for (std::size_t s = 0; s < parts; ++s) {
    const auto [begin, end] = stripe_bounds(h, parts, s);
    const double count = static_cast<double>((end - begin) * w);
    Tensor part({c});
    for (std::size_t k = 0; k < c; ++k) {
      double acc = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t j = 0; j < w; ++j) acc += features(k, i, j);
      }
      part[k] = acc / count;
    }
    result.parts.push_back(std::move(part));
  }
  result.tape = LayerTape(StripePoolState{features.shape(), parts});
  return result;
}

Tensor stripe_pool_backward(const LayerTape& tape, std::span<const Tensor> grad_parts) {
  const auto& st = tape.as<StripePoolState>();
  const std::size_t c = st.input_shape[0], h = st.input_shape[1], w = st.input_shape[2];
  if (grad_parts.size() != st.parts) {
    throw DimensionError("stripe_pool_backward: expected " + std::to_string(st.parts) + " part gradients, got " +
                         std::to_string(grad_parts.size()));
  }
  Tensor grad(st.input_shape);
  for (std::size_t s = 0; s < st.parts; ++s) {
    require_same_shape(grad_parts[s].shape(), Shape{c}, "stripe_pool_backward part gradient");
    const auto [begin, end] = stripe_bounds(h, st.parts, s);
    const double count = static_cast<double>((end - begin) * w);
    for (std::size_t k = 0; k < c; ++k) {
      const double v = grad_parts[s][k] / count;
      for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t j = 0; j < w; ++j) grad(k, i, j) = v;
      }
    }
  }
  return grad;
}

}  // namespace pfsa

#include "pfsa/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pfsa/errors.hpp"

namespace pfsa {

std::string_view layer_kind_name(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::fully_connected: return "fc";
    case LayerKind::avg_pool2: return "avg_pool2";
    case LayerKind::spatial_attention: return "sa";
    case LayerKind::global_pool: return "gap";
    case LayerKind::stripe_pool: return "stripe_pool";
  }
  return "unknown";
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      for (std::size_t j = 0; j < n; ++j) out(i, j) += aip * b(p, j);
    }
  }
  return out;
}

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ConfigError("convolution stride must be positive");
  const std::size_t padded = input + 2 * pad;
  if (kernel == 0 || kernel > padded || (padded - kernel) % stride != 0) {
    throw ConfigError("convolution output size is not a positive integer: input " + std::to_string(input) +
                      ", kernel " + std::to_string(kernel) + ", stride " + std::to_string(stride) + ", pad " +
                      std::to_string(pad));
  }
  return (padded - kernel) / stride + 1;
}

LayerOutput conv2d_forward(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
                           std::size_t pad) {
  require_rank(x, 3, "conv2d_forward input");
  require_rank(kernels, 4, "conv2d_forward kernels");
  const std::size_t c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t c_out = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != c_in) {
    throw DimensionError("conv2d_forward: kernels " + shape_string(kernels.shape()) + " do not match input " +
                         shape_string(x.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != c_out) {
    throw DimensionError("conv2d_forward: bias " + shape_string(bias.shape()) + " does not match kernels " +
                         shape_string(kernels.shape()));
  }
  const std::size_t oh = conv_output_extent(h, kh, stride, pad);
  const std::size_t ow = conv_output_extent(w, kw, stride, pad);

  Tensor out({c_out, oh, ow});
  const auto ih_of = [&](std::size_t oi, std::size_t ki) {
    return static_cast<std::ptrdiff_t>(oi * stride + ki) - static_cast<std::ptrdiff_t>(pad);
  };
  for (std::size_t co = 0; co < c_out; ++co) {
    for (std::size_t oi = 0; oi < oh; ++oi) {
      for (std::size_t oj = 0; oj < ow; ++oj) out(co, oi, oj) = bias[co];
    }
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const double kv = kernels(co, ci, ki, kj);
          for (std::size_t oi = 0; oi < oh; ++oi) {
            const auto ii = ih_of(oi, ki);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t oj = 0; oj < ow; ++oj) {
              const auto jj = ih_of(oj, kj);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
              out(co, oi, oj) += kv * x(ci, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
            }
          }
        }
      }
    }
  }
  return {std::move(out), LayerTape(ConvState{x, kernels, stride, pad})};
}

Conv2dGrads conv2d_backward(const LayerTape& tape, const Tensor& grad_out) {
  const auto& st = tape.as<ConvState>();
  const Tensor& x = st.input;
  const Tensor& k = st.kernels;
  const std::size_t c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t c_out = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = conv_output_extent(h, kh, st.stride, st.pad);
  const std::size_t ow = conv_output_extent(w, kw, st.stride, st.pad);
  require_same_shape(grad_out.shape(), Shape{c_out, oh, ow}, "conv2d_backward grad_out");

  Conv2dGrads g{Tensor(x.shape()), Tensor(k.shape()), Tensor({c_out})};
  const auto src = [&](std::size_t o, std::size_t kk) {
    return static_cast<std::ptrdiff_t>(o * st.stride + kk) - static_cast<std::ptrdiff_t>(st.pad);
  };
  for (std::size_t co = 0; co < c_out; ++co) {
    double bsum = 0.0;
    for (std::size_t oi = 0; oi < oh; ++oi) {
      for (std::size_t oj = 0; oj < ow; ++oj) bsum += grad_out(co, oi, oj);
    }
    g.bias[co] = bsum;
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const double kv = k(co, ci, ki, kj);
          double ksum = 0.0;
          for (std::size_t oi = 0; oi < oh; ++oi) {
            const auto ii = src(oi, ki);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t oj = 0; oj < ow; ++oj) {
              const auto jj = src(oj, kj);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
              const double go = grad_out(co, oi, oj);
              const auto ui = static_cast<std::size_t>(ii);
              const auto uj = static_cast<std::size_t>(jj);
              ksum += go * x(ci, ui, uj);
              g.input(ci, ui, uj) += go * kv;
            }
          }
          g.kernels(co, ci, ki, kj) = ksum;
        }
      }
    }
  }
  return g;
}

LayerOutput relu_forward(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) {
    if (v < 0.0) v = 0.0;
  }
  return {std::move(out), LayerTape(ReluState{x})};
}

Tensor relu_backward(const LayerTape& tape, const Tensor& grad_out) {
  const auto& st = tape.as<ReluState>();
  require_same_shape(grad_out.shape(), st.input.shape(), "relu_backward grad_out");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(st.input[i] > 0.0)) g[i] = 0.0;
  }
  return g;
}

LayerOutput fc_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  require_rank(x, 1, "fc_forward input");
  require_rank(weights, 2, "fc_forward weights");
  const std::size_t c = weights.dim(0), d = weights.dim(1);
  if (x.dim(0) != d || bias.rank() != 1 || bias.dim(0) != c) {
    throw DimensionError("fc_forward: input " + shape_string(x.shape()) + ", weights " +
                         shape_string(weights.shape()) + ", bias " + shape_string(bias.shape()) + " disagree");
  }
  Tensor out({c});
  for (std::size_t r = 0; r < c; ++r) {
    double acc = bias[r];
    for (std::size_t j = 0; j < d; ++j) acc += weights(r, j) * x[j];
    out[r] = acc;
  }
  return {std::move(out), LayerTape(FcState{x, weights})};
}

FcGrads fc_backward(const LayerTape& tape, const Tensor& grad_out) {
  const auto& st = tape.as<FcState>();
  const std::size_t c = st.weights.dim(0), d = st.weights.dim(1);
  require_same_shape(grad_out.shape(), Shape{c}, "fc_backward grad_out");
  FcGrads g{Tensor({d}), Tensor({c, d}), grad_out};
  for (std::size_t r = 0; r < c; ++r) {
    const double go = grad_out[r];
    for (std::size_t j = 0; j < d; ++j) {
      g.weights(r, j) = go * st.input[j];
      g.input[j] += go * st.weights(r, j);
    }
  }
  return g;
}

LayerOutput avg_pool2_forward(const Tensor& x) {
  require_rank(x, 3, "avg_pool2_forward input");
  const std::size_t c = x.dim(0), oh = x.dim(1) / 2, ow = x.dim(2) / 2;
  if (oh == 0 || ow == 0) {
    throw ConfigError("avg_pool2: feature map " + shape_string(x.shape()) + " is too small to downsample");
  }
  Tensor out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        out(ch, i, j) = 0.25 * (x(ch, 2 * i, 2 * j) + x(ch, 2 * i, 2 * j + 1) + x(ch, 2 * i + 1, 2 * j) +
                                x(ch, 2 * i + 1, 2 * j + 1));
      }
    }
  }
  return {std::move(out), LayerTape(AvgPool2State{x.shape()})};
}

Tensor avg_pool2_backward(const LayerTape& tape, const Tensor& grad_out) {
  const auto& st = tape.as<AvgPool2State>();
  const std::size_t c = st.input_shape[0], oh = st.input_shape[1] / 2, ow = st.input_shape[2] / 2;
  require_same_shape(grad_out.shape(), Shape{c, oh, ow}, "avg_pool2_backward grad_out");
  Tensor g(st.input_shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const double v = 0.25 * grad_out(ch, i, j);
        g(ch, 2 * i, 2 * j) = v;
        g(ch, 2 * i, 2 * j + 1) = v;
        g(ch, 2 * i + 1, 2 * j) = v;
        g(ch, 2 * i + 1, 2 * j + 1) = v;
      }
    }
  }
  return g;
}

std::vector<double> stable_softmax(std::span<const double> values) {
  std::vector<double> out(values.begin(), values.end());
  if (out.empty()) return out;
  const double peak = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (auto& v : out) {
    v = std::exp(v - peak);
    total += v;
  }
  for (auto& v : out) v /= total;
  return out;
}

CrossEntropy softmax_ce(const Tensor& logits, std::size_t label) {
  require_rank(logits, 1, "softmax_ce logits");
  const std::size_t c = logits.dim(0);
  if (label >= c) {
    throw ContractError("softmax_ce: label " + std::to_string(label) + " out of range for " + std::to_string(c) +
                        " classes");
  }
  const auto values = logits.data();
  const double peak = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += std::exp(v - peak);
  const double log_total = std::log(total);

  CrossEntropy ce;
  // loss = log Σ exp(z - peak) - (z_label - peak); the max term is >= 0 so the loss never goes negative.
  ce.loss = log_total - (values[label] - peak);
  if (ce.loss < 0.0) ce.loss = 0.0;
  ce.grad_logits = Tensor({c});
  for (std::size_t i = 0; i < c; ++i) ce.grad_logits[i] = std::exp(values[i] - peak - log_total);
  ce.grad_logits[label] -= 1.0;
  return ce;
}

}  // namespace pfsa

#include "pfsa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pfsa/attention.hpp"
#include "pfsa/layers.hpp"

namespace pfsa {

double gradient_error(double analytic, double numeric) noexcept {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1.0});
  return std::abs(analytic - numeric) / scale;
}

double max_gradient_error(const Tensor& analytic, const Tensor& numeric) {
  require_same_shape(analytic.shape(), numeric.shape(), "max_gradient_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, gradient_error(analytic[i], numeric[i]));
  return worst;
}

Tensor central_difference(const std::function<double(const Tensor&)>& fn, const Tensor& at, double step) {
  Tensor grad(at.shape());
  Tensor probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = fn(probe);
    probe[i] = orig - step;
    const double down = fn(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

ModelConfig gradcheck_model_config() {
  ModelConfig cfg;
  cfg.stages = {{4, 3, 1, 1, true}, {6, 3, 1, 1, false}};
  cfg.input_channels = 3;
  cfg.input_height = 8;
  cfg.input_width = 8;
  cfg.num_classes = 3;
  cfg.parts = 2;
  cfg.reduced_dim = 4;
  cfg.lambda = 0.3;
  cfg.sa_on_ds = true;
  cfg.sa_on_backbone = true;
  cfg.seed = 11;
  return cfg;
}

namespace {

class Checker {
 public:
  explicit Checker(const GradcheckOptions& opts) : opts_(opts), rng_(opts.seed) {}

  std::size_t pick(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_); }

  Tensor random(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng_);
    return t;
  }

  Shape random_map_shape() { return {pick(1, 4), pick(1, 8), pick(1, 8)}; }

  /// Records the worst error of one analytic/numeric pair for `layer`.
  void compare(const std::string& layer, Tensor analytic, const Tensor& numeric) {
    if (layer == opts_.inject_fault) analytic *= -1.0;
    worst_ = std::max(worst_, max_gradient_error(analytic, numeric));
  }

  GradcheckEntry finish(const std::string& layer, double threshold) {
    GradcheckEntry e{layer, worst_, threshold, worst_ < threshold};
    worst_ = 0.0;
    return e;
  }

  static double dot(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
  }

  double step() const { return opts_.step; }

 private:
  const GradcheckOptions& opts_;
  std::mt19937_64 rng_;
  double worst_ = 0.0;
};

void check_conv(Checker& ck) {
  Shape shape;
  std::size_t kernel = 1, stride = 1, pad = 0;
  do {
    shape = ck.random_map_shape();
    kernel = ck.pick(1, 3);
    stride = ck.pick(1, 2);
    pad = ck.pick(0, 1);
  } while (shape[1] + 2 * pad < kernel || shape[2] + 2 * pad < kernel || (shape[1] + 2 * pad - kernel) % stride ||
           (shape[2] + 2 * pad - kernel) % stride);
  const std::size_t c_out = ck.pick(1, 4);
  const Tensor x = ck.random(shape);
  const Tensor k = ck.random({c_out, shape[0], kernel, kernel});
  const Tensor b = ck.random({c_out});
  const auto fwd = conv2d_forward(x, k, b, stride, pad);
  const Tensor r = ck.random(fwd.out.shape());
  const auto g = conv2d_backward(fwd.tape, r);
  const double h = ck.step();
  ck.compare("conv2d", g.input,
             central_difference([&](const Tensor& t) { return Checker::dot(r, conv2d_forward(t, k, b, stride, pad).out); }, x, h));
  ck.compare("conv2d", g.kernels,
             central_difference([&](const Tensor& t) { return Checker::dot(r, conv2d_forward(x, t, b, stride, pad).out); }, k, h));
  ck.compare("conv2d", g.bias,
             central_difference([&](const Tensor& t) { return Checker::dot(r, conv2d_forward(x, k, t, stride, pad).out); }, b, h));
}

void check_relu(Checker& ck) {
  Tensor x = ck.random(ck.random_map_shape());
  for (auto& v : x.data()) {
    if (std::abs(v) < 1e-3) v = v < 0 ? -1e-3 : 1e-3;
  }
  const auto fwd = relu_forward(x);
  const Tensor r = ck.random(x.shape());
  ck.compare("relu", relu_backward(fwd.tape, r),
             central_difference([&](const Tensor& t) { return Checker::dot(r, relu_forward(t).out); }, x, ck.step()));
}

void check_fc(Checker& ck) {
  const std::size_t d = ck.pick(1, 16), c = ck.pick(1, 8);
  const Tensor x = ck.random({d}), w = ck.random({c, d}), b = ck.random({c});
  const auto fwd = fc_forward(x, w, b);
  const Tensor r = ck.random({c});
  const auto g = fc_backward(fwd.tape, r);
  const double h = ck.step();
  ck.compare("fc", g.input, central_difference([&](const Tensor& t) { return Checker::dot(r, fc_forward(t, w, b).out); }, x, h));
  ck.compare("fc", g.weights, central_difference([&](const Tensor& t) { return Checker::dot(r, fc_forward(x, t, b).out); }, w, h));
  ck.compare("fc", g.bias, central_difference([&](const Tensor& t) { return Checker::dot(r, fc_forward(x, w, t).out); }, b, h));
}

void check_softmax_ce(Checker& ck) {
  const std::size_t c = ck.pick(1, 8);
  const Tensor logits = ck.random({c}, -3.0, 3.0);
  const std::size_t label = ck.pick(0, c - 1);
  ck.compare("softmax_ce", softmax_ce(logits, label).grad_logits,
             central_difference([&](const Tensor& t) { return softmax_ce(t, label).loss; }, logits, ck.step()));
}

void check_avg_pool2(Checker& ck) {
  const Tensor x = ck.random({ck.pick(1, 4), ck.pick(2, 8), ck.pick(2, 8)});
  const auto fwd = avg_pool2_forward(x);
  const Tensor r = ck.random(fwd.out.shape());
  ck.compare("avg_pool2", avg_pool2_backward(fwd.tape, r),
             central_difference([&](const Tensor& t) { return Checker::dot(r, avg_pool2_forward(t).out); }, x, ck.step()));
}

void check_sa(Checker& ck) {
  const Tensor f = ck.random(ck.random_map_shape(), -1.0, 2.0);
  const auto fwd = sa_forward(f);
  const Tensor r = ck.random(f.shape());
  ck.compare("sa", sa_backward(fwd.tape, r),
             central_difference([&](const Tensor& t) { return Checker::dot(r, sa_forward(t).out); }, f, ck.step()));
}

void check_gap(Checker& ck) {
  const Tensor f = ck.random(ck.random_map_shape());
  for (PoolMode mode : {PoolMode::mean, PoolMode::sum}) {
    const auto fwd = gap_forward(f, mode);
    const Tensor r = ck.random(fwd.out.shape());
    ck.compare("gap", gap_backward(fwd.tape, r),
               central_difference([&](const Tensor& t) { return Checker::dot(r, gap_forward(t, mode).out); }, f, ck.step()));
  }
}

void check_stripe_pool(Checker& ck) {
  const Tensor f = ck.random(ck.random_map_shape());
  const std::size_t m = ck.pick(1, f.dim(1));
  const auto fwd = stripe_pool(f, m);
  std::vector<Tensor> r;
  for (std::size_t s = 0; s < m; ++s) r.push_back(ck.random({f.dim(0)}));
  const auto objective = [&](const Tensor& t) {
    const auto out = stripe_pool(t, m);
    double acc = 0.0;
    for (std::size_t s = 0; s < m; ++s) acc += Checker::dot(r[s], out.parts[s]);
    return acc;
  };
  ck.compare("stripe_pool", stripe_pool_backward(fwd.tape, r), central_difference(objective, f, ck.step()));
}

void check_model(Checker& ck) {
  const ModelConfig cfg = gradcheck_model_config();
  Params params = init_params(cfg);
  // Non-zero biases so every bias gradient path is exercised away from the init point.
  for (auto& [name, t] : params) {
    if (name.ends_with(".bias")) t = ck.random(t.shape(), -0.1, 0.1);
  }
  const Tensor image = ck.random(cfg.input_shape(), 0.0, 1.0);
  const std::size_t label = ck.pick(0, cfg.num_classes - 1);
  const auto fwd = forward_train(params, cfg, image, label);
  const Params grads = backward(params, cfg, fwd.record, cfg.lambda);
  for (const auto& [name, value] : params) {
    const auto objective = [&, key = name](const Tensor& t) {
      Params probe = params;
      probe.at(key) = t;
      return total_loss(forward_train(probe, cfg, image, label).losses, cfg.lambda);
    };
    ck.compare("model", grads.at(name), central_difference(objective, value, ck.step()));
  }
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& options) {
  Checker ck(options);
  std::vector<GradcheckEntry> report;
  const auto layer = [&](const std::string& name, void (*check)(Checker&)) {
    for (std::size_t t = 0; t < options.trials; ++t) check(ck);
    report.push_back(ck.finish(name, options.layer_threshold));
  };
  layer("conv2d", check_conv);
  layer("relu", check_relu);
  layer("fc", check_fc);
  layer("softmax_ce", check_softmax_ce);
  layer("avg_pool2", check_avg_pool2);
  layer("sa", check_sa);
  layer("gap", check_gap);
  layer("stripe_pool", check_stripe_pool);
  check_model(ck);
  report.push_back(ck.finish("model", options.model_threshold));
  return report;
}

}  // namespace pfsa

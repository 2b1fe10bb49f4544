#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pfsa/errors.hpp"
#include "pfsa/layers.hpp"
#include "support/oracles.hpp"

using namespace pfsa;
using oracle::random_tensor;

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{1, 1, 1, 1, 1}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, RowMajorIndexing) {
  Tensor t({2, 3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  EXPECT_EQ(t(1, 2, 3), 23.0);
  EXPECT_EQ(t(0, 1, 0), 4.0);
  EXPECT_EQ(t.reshaped({6, 4})(5, 3), 23.0);
  EXPECT_THROW(t.reshaped({5, 5}), DimensionError);
}

TEST(Matmul, IdentityLeavesMatrix) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Tensor::matrix({{1, 0}, {0, 1}}), a), a);
}

TEST(Matmul, HandArithmetic) {
  EXPECT_EQ(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})), Tensor::matrix({{11}}));
}

TEST(Matmul, MatchesTripleLoopExactly) {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor(rng, {5, 7});
  const Tensor b = random_tensor(rng, {7, 3});
  EXPECT_EQ(matmul(a, b), oracle::triple_loop_matmul(a, b));
}

TEST(Matmul, InnerMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x2"), std::string::npos) << msg;
  }
}

TEST(Conv2d, UnitKernelIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(rng, {1, 4, 5});
  const auto y = conv2d_forward(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}), 1, 0);
  EXPECT_EQ(y.out, x);
}

TEST(Conv2d, AllOnesCountsWindow) {
  const auto y = conv2d_forward(Tensor({1, 3, 3}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor({1}), 1, 0);
  ASSERT_EQ(y.out.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y.out[0], 9.0);
}

TEST(Conv2d, MatchesSlidingWindowOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = pick(rng, 1, 4), O = pick(rng, 1, 4), K = pick(rng, 1, 3);
    const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    std::size_t H = pick(rng, K, 8), W = pick(rng, K, 8);
    H += (H + 2 * pad - K) % stride;
    W += (W + 2 * pad - K) % stride;
    const Tensor x = random_tensor(rng, {C, H, W});
    const Tensor w = random_tensor(rng, {O, C, K, K});
    const Tensor b = random_tensor(rng, {O});
    const Tensor got = conv2d_forward(x, w, b, stride, pad).out;
    const Tensor want = oracle::sliding_window_conv(x, w, b, stride, pad);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LE(oracle::max_abs_error(got, want), 1e-12);
  }
}

TEST(Conv2d, NonIntegralOutputIsConfigError) {
  EXPECT_THROW(conv_output_extent(4, 3, 2, 0), ConfigError);
  EXPECT_THROW(conv2d_forward(Tensor({1, 4, 4}), Tensor({1, 1, 3, 3}), Tensor({1}), 2, 0), ConfigError);
  EXPECT_EQ(conv_output_extent(5, 3, 2, 0), 2u);
}

TEST(Conv2d, ZeroGradientGivesZeroGradients) {
  std::mt19937_64 rng(2);
  const auto fwd = conv2d_forward(random_tensor(rng, {2, 4, 4}), random_tensor(rng, {3, 2, 3, 3}),
                                  random_tensor(rng, {3}), 1, 1);
  const auto g = conv2d_backward(fwd.tape, Tensor(fwd.out.shape()));
  for (const Tensor* t : {&g.input, &g.kernels, &g.bias})
    for (double v : t->data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, UnitKernelPassesGradientThrough) {
  std::mt19937_64 rng(4);
  const auto fwd = conv2d_forward(random_tensor(rng, {1, 3, 3}), Tensor({1, 1, 1, 1}, 1.0), Tensor({1}), 1, 0);
  const Tensor g = random_tensor(rng, {1, 3, 3});
  EXPECT_EQ(conv2d_backward(fwd.tape, g).input, g);
}

TEST(Conv2d, BackwardRejectsForeignTape) {
  const auto relu = relu_forward(Tensor({1, 2, 2}));
  try {
    conv2d_backward(relu.tape, Tensor({1, 2, 2}));
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("kind mismatch"), std::string::npos);
  }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = pick(rng, 1, 4), O = pick(rng, 1, 3), K = pick(rng, 1, 3), pad = pick(rng, 0, 1);
    const std::size_t H = pick(rng, K, 8), W = pick(rng, K, 8);
    const Tensor x = random_tensor(rng, {C, H, W});
    const Tensor w = random_tensor(rng, {O, C, K, K});
    const Tensor b = random_tensor(rng, {O});
    const auto fwd = conv2d_forward(x, w, b, 1, pad);
    const Tensor r = random_tensor(rng, fwd.out.shape());
    const auto g = conv2d_backward(fwd.tape, r);
    worst = std::max(worst, oracle::max_rel_error(g.input, oracle::numeric_gradient([&](const Tensor& v) {
                                                    return oracle::dot(r, oracle::sliding_window_conv(v, w, b, 1, pad));
                                                  }, x)));
    worst = std::max(worst, oracle::max_rel_error(g.kernels, oracle::numeric_gradient([&](const Tensor& v) {
                                                    return oracle::dot(r, oracle::sliding_window_conv(x, v, b, 1, pad));
                                                  }, w)));
    worst = std::max(worst, oracle::max_rel_error(g.bias, oracle::numeric_gradient([&](const Tensor& v) {
                                                    return oracle::dot(r, oracle::sliding_window_conv(x, w, v, 1, pad));
                                                  }, b)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Conv2d, StridedGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor(rng, {2, 7, 5});
  const Tensor w = random_tensor(rng, {3, 2, 3, 3});
  const Tensor b = random_tensor(rng, {3});
  const auto fwd = conv2d_forward(x, w, b, 2, 1);
  const Tensor r = random_tensor(rng, fwd.out.shape());
  const auto g = conv2d_backward(fwd.tape, r);
  const auto numeric = oracle::numeric_gradient(
      [&](const Tensor& v) { return oracle::dot(r, conv2d_forward(v, w, b, 2, 1).out); }, x);
  EXPECT_LT(oracle::max_rel_error(g.input, numeric), 1e-6);
}

TEST(Relu, ClampsNegatives) {
  EXPECT_EQ(relu_forward(Tensor::vector({-1, 0, 2})).out, Tensor::vector({0, 0, 2}));
}

TEST(Relu, SubgradientAtZeroIsZero) {
  const auto fwd = relu_forward(Tensor::vector({-1, 0, 2}));
  EXPECT_EQ(relu_backward(fwd.tape, Tensor::vector({5, 5, 5})), Tensor::vector({0, 0, 5}));
}

TEST(Relu, GradientMatchesFiniteDifferencesAwayFromKink) {
  std::mt19937_64 rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = random_tensor(rng, {pick(rng, 1, 4), pick(rng, 1, 8), pick(rng, 1, 8)});
    for (auto& v : x.data())
      if (std::abs(v) < 1e-3) v = v < 0 ? -1e-3 : 1e-3;
    const auto fwd = relu_forward(x);
    const Tensor r = random_tensor(rng, x.shape());
    const auto numeric = oracle::numeric_gradient([&](const Tensor& v) {
      double s = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) s += r[i] * std::max(v[i], 0.0);
      return s;
    }, x);
    worst = std::max(worst, oracle::max_rel_error(relu_backward(fwd.tape, r), numeric));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(FullyConnected, IdentityWeights) {
  const Tensor x = Tensor::vector({0.5, -2, 3});
  EXPECT_EQ(fc_forward(x, Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), Tensor({3})).out, x);
}

TEST(FullyConnected, HandArithmetic) {
  const auto y = fc_forward(Tensor::vector({10, 20}), Tensor::matrix({{1, 2}}), Tensor::vector({3}));
  EXPECT_EQ(y.out, Tensor::vector({53}));
}

TEST(FullyConnected, ShapeMismatch) {
  EXPECT_THROW(fc_forward(Tensor({3}), Tensor({2, 4}), Tensor({2})), DimensionError);
  EXPECT_THROW(fc_forward(Tensor({4}), Tensor({2, 4}), Tensor({3})), DimensionError);
}

TEST(FullyConnected, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(10);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = pick(rng, 1, 12), c = pick(rng, 1, 6);
    const Tensor x = random_tensor(rng, {d}), w = random_tensor(rng, {c, d}), b = random_tensor(rng, {c});
    const Tensor r = random_tensor(rng, {c});
    const auto g = fc_backward(fc_forward(x, w, b).tape, r);
    const auto obj = [&](const Tensor& xv, const Tensor& wv, const Tensor& bv) {
      double s = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        double y = bv[i];
        for (std::size_t j = 0; j < d; ++j) y += wv(i, j) * xv[j];
        s += r[i] * y;
      }
      return s;
    };
    worst = std::max(worst, oracle::max_rel_error(
                                g.input, oracle::numeric_gradient([&](const Tensor& v) { return obj(v, w, b); }, x)));
    worst = std::max(worst, oracle::max_rel_error(
                                g.weights, oracle::numeric_gradient([&](const Tensor& v) { return obj(x, v, b); }, w)));
    worst = std::max(worst, oracle::max_rel_error(
                                g.bias, oracle::numeric_gradient([&](const Tensor& v) { return obj(x, w, v); }, b)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(AvgPool2, AveragesBlocksAndDropsOddEdge) {
  Tensor x({1, 3, 5});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const auto y = avg_pool2_forward(x);
  ASSERT_EQ(y.out.shape(), (Shape{1, 1, 2}));
  EXPECT_DOUBLE_EQ(y.out(0, 0, 0), (0 + 1 + 5 + 6) / 4.0);
  EXPECT_DOUBLE_EQ(y.out(0, 0, 1), (2 + 3 + 7 + 8) / 4.0);
  EXPECT_THROW(avg_pool2_forward(Tensor({1, 1, 4})), ConfigError);
}

TEST(AvgPool2, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = random_tensor(rng, {pick(rng, 1, 4), pick(rng, 2, 8), pick(rng, 2, 8)});
    const auto fwd = avg_pool2_forward(x);
    const Tensor r = random_tensor(rng, fwd.out.shape());
    const auto numeric = oracle::numeric_gradient([&](const Tensor& v) {
      double s = 0.0;
      for (std::size_t c = 0; c < r.dim(0); ++c)
        for (std::size_t i = 0; i < r.dim(1); ++i)
          for (std::size_t j = 0; j < r.dim(2); ++j)
            s += r(c, i, j) *
                 (v(c, 2 * i, 2 * j) + v(c, 2 * i + 1, 2 * j) + v(c, 2 * i, 2 * j + 1) + v(c, 2 * i + 1, 2 * j + 1)) /
                 4.0;
      return s;
    }, x);
    worst = std::max(worst, oracle::max_rel_error(avg_pool2_backward(fwd.tape, r), numeric));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(SoftmaxCe, UniformLogitsGiveLogC) {
  const auto ce = softmax_ce(Tensor({4}, 0.7), 2);
  EXPECT_NEAR(ce.loss, std::log(4.0), 1e-12);
  EXPECT_NEAR(ce.loss, 1.386294, 1e-6);
}

TEST(SoftmaxCe, ShiftInvariance) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor z = random_tensor(rng, {5}, -3, 3);
    Tensor shifted = z;
    for (auto& v : shifted.data()) v += 1000.0;
    const auto a = softmax_ce(z, 1), b = softmax_ce(shifted, 1);
    EXPECT_NEAR(a.loss, b.loss, 1e-9);
    EXPECT_LE(oracle::max_abs_error(a.grad_logits, b.grad_logits), 1e-12);
    double sum = 0.0;
    for (double g : a.grad_logits.data()) sum += g;
    EXPECT_NEAR(sum, 0.0, 1e-12);
  }
}

TEST(SoftmaxCe, LabelOutOfRange) { EXPECT_THROW(softmax_ce(Tensor({3}), 3), ContractError); }

TEST(SoftmaxCe, SingleClassLossIsZero) { EXPECT_EQ(softmax_ce(Tensor::vector({42.0}), 0).loss, 0.0); }

TEST(SoftmaxCe, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = pick(rng, 2, 10);
    const Tensor z = random_tensor(rng, {c}, -4, 4);
    const std::size_t label = pick(rng, 0, c - 1);
    const auto numeric = oracle::numeric_gradient([&](const Tensor& v) {
      double z_max = v[0];
      for (double e : v.data()) z_max = std::max(z_max, e);
      double s = 0.0;
      for (double e : v.data()) s += std::exp(e - z_max);
      return std::log(s) + z_max - v[label];
    }, z);
    worst = std::max(worst, oracle::max_rel_error(softmax_ce(z, label).grad_logits, numeric));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Numerics, Deterministic) {
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor(rng, {3, 6, 6}), w = random_tensor(rng, {4, 3, 3, 3}), b = random_tensor(rng, {4});
  EXPECT_EQ(conv2d_forward(x, w, b, 1, 1).out, conv2d_forward(x, w, b, 1, 1).out);
  const auto t1 = conv2d_forward(x, w, b, 1, 1), t2 = conv2d_forward(x, w, b, 1, 1);
  const Tensor g = random_tensor(rng, t1.out.shape());
  EXPECT_EQ(conv2d_backward(t1.tape, g).kernels, conv2d_backward(t2.tape, g).kernels);
}

#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "softdiamond/error.hpp"
#include "softdiamond/layers.hpp"

using namespace softdiamond;
using namespace softdiamond::net;
using gradcheck::dot;
using gradcheck::max_relative_error;
using gradcheck::random_tensor;

namespace {

constexpr int kSeeds = 20;
constexpr double kTol = 1e-4;
constexpr double kStep = 1e-5;

}  // namespace

TEST(DenseOp, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(100 + seed);
    Tensor x = random_tensor({3, 5}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({4}, rng);
    const Tensor r = random_tensor({3, 4}, rng);
    auto s = [&] { return dot(r, ops::dense_forward(x, w, b)); };
    const auto g = ops::dense_backward(x, w, r);
    EXPECT_LT(max_relative_error(x, g.dx, s, kStep), kTol) << "seed " << seed;
    EXPECT_LT(max_relative_error(w, g.dw, s, kStep), kTol) << "seed " << seed;
    EXPECT_LT(max_relative_error(b, g.db, s, kStep), kTol) << "seed " << seed;
  }
}

TEST(ConvOp, GradientsMatchFiniteDifferences) {
  struct Case {
    std::size_t stride, padding, kernel;
  };
  for (int seed = 0; seed < kSeeds; ++seed) {
    for (const Case c : {Case{1, 0, 3}, Case{1, 1, 3}, Case{2, 1, 3}, Case{1, 0, 1}}) {
      Rng rng(200 + seed);
      Tensor x = random_tensor({2, 2, 5, 5}, rng);
      Tensor w = random_tensor({3, 2, c.kernel, c.kernel}, rng);
      Tensor b = random_tensor({3}, rng);
      const Tensor y0 = ops::conv2d_forward(x, w, b, c.stride, c.padding);
      const Tensor r = random_tensor(y0.shape(), rng);
      auto s = [&] { return dot(r, ops::conv2d_forward(x, w, b, c.stride, c.padding)); };
      const auto g = ops::conv2d_backward(x, w, r, c.stride, c.padding);
      EXPECT_LT(max_relative_error(x, g.dx, s, kStep), kTol) << "seed " << seed << " stride " << c.stride;
      EXPECT_LT(max_relative_error(w, g.dw, s, kStep), kTol) << "seed " << seed << " stride " << c.stride;
      EXPECT_LT(max_relative_error(b, g.db, s, kStep), kTol) << "seed " << seed << " stride " << c.stride;
    }
  }
}

TEST(ConvOp, IdentityKernelIsIdentityMap) {
  Rng rng(1);
  const Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor w({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  EXPECT_EQ(ops::conv2d_forward(x, w, Tensor({3}), 1, 0), x);
}

TEST(ConvOp, OutputShapeFollowsStrideAndPadding) {
  const Tensor x({1, 1, 5, 5}, 1.0);
  const Tensor w({2, 1, 3, 3}, 1.0);
  EXPECT_EQ(ops::conv2d_forward(x, w, Tensor({2}), 1, 0).shape(), (Shape{1, 2, 3, 3}));
  EXPECT_EQ(ops::conv2d_forward(x, w, Tensor({2}), 1, 1).shape(), (Shape{1, 2, 5, 5}));
  EXPECT_EQ(ops::conv2d_forward(x, w, Tensor({2}), 2, 1).shape(), (Shape{1, 2, 3, 3}));
  // interior output of an all-ones 3x3 kernel over all-ones input counts nine taps
  EXPECT_EQ(ops::conv2d_forward(x, w, Tensor({2}), 1, 1)[6], 9.0);
  EXPECT_EQ(ops::conv2d_forward(x, w, Tensor({2}), 1, 1)[0], 4.0);
  EXPECT_THROW(ops::conv2d_forward(x, Tensor({2, 2, 3, 3}), Tensor({2}), 1, 0), ShapeMismatch);
}

TEST(BatchNormOp, TrainingGradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    for (const Shape shape : {Shape{4, 3, 2, 2}, Shape{5, 3}}) {
      Rng rng(300 + seed);
      Tensor x = random_tensor(shape, rng, 2.0);
      Tensor gamma = random_tensor({3}, rng), beta = random_tensor({3}, rng);
      const Tensor rm({3}, 0.0), rv({3}, 1.0);
      const Tensor r = random_tensor(shape, rng);
      auto s = [&] { return dot(r, ops::batchnorm_forward(x, gamma, beta, 1e-5, true, rm, rv).y); };
      const auto fwd = ops::batchnorm_forward(x, gamma, beta, 1e-5, true, rm, rv);
      const auto g = ops::batchnorm_backward(r, gamma, fwd.cache, true);
      EXPECT_LT(max_relative_error(x, g.dx, s, kStep), kTol) << "seed " << seed;
      EXPECT_LT(max_relative_error(gamma, g.dgamma, s, kStep), kTol) << "seed " << seed;
      EXPECT_LT(max_relative_error(beta, g.dbeta, s, kStep), kTol) << "seed " << seed;
    }
  }
}

TEST(BatchNormOp, EvalGradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(400 + seed);
    Tensor x = random_tensor({3, 2, 3, 3}, rng, 2.0);
    Tensor gamma = random_tensor({2}, rng), beta = random_tensor({2}, rng);
    const Tensor rm = random_tensor({2}, rng);
    Tensor rv({2});
    rv[0] = 0.5 + uniform01(rng);
    rv[1] = 0.5 + uniform01(rng);
    const Tensor r = random_tensor(x.shape(), rng);
    auto s = [&] { return dot(r, ops::batchnorm_forward(x, gamma, beta, 1e-5, false, rm, rv).y); };
    const auto fwd = ops::batchnorm_forward(x, gamma, beta, 1e-5, false, rm, rv);
    const auto g = ops::batchnorm_backward(r, gamma, fwd.cache, false);
    EXPECT_LT(max_relative_error(x, g.dx, s, kStep), kTol) << "seed " << seed;
    EXPECT_LT(max_relative_error(gamma, g.dgamma, s, kStep), kTol) << "seed " << seed;
    EXPECT_LT(max_relative_error(beta, g.dbeta, s, kStep), kTol) << "seed " << seed;
  }
}

TEST(BatchNormOp, TrainingOutputIsStandardizedPerChannel) {
  Rng rng(5);
  const Tensor x = random_tensor({6, 2, 3, 3}, rng, 4.0);
  const auto fwd = ops::batchnorm_forward(x, Tensor({2}, 1.0), Tensor({2}, 0.0), 0.0, true, Tensor({2}),
                                          Tensor({2}, 1.0));
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t n = 0; n < 6; ++n)
      for (std::size_t i = 0; i < 9; ++i) m += fwd.y[(n * 2 + c) * 9 + i];
    m /= 54.0;
    for (std::size_t n = 0; n < 6; ++n)
      for (std::size_t i = 0; i < 9; ++i) v += std::pow(fwd.y[(n * 2 + c) * 9 + i] - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 54.0, 1.0, 1e-12);
  }
}

TEST(ReluOp, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(500 + seed);
    Tensor x = random_tensor({4, 6}, rng);
    const Tensor r = random_tensor({4, 6}, rng);
    auto s = [&] { return dot(r, ops::relu_forward(x)); };
    EXPECT_LT(max_relative_error(x, ops::relu_backward(x, r), s, kStep), kTol) << "seed " << seed;
  }
}

TEST(ReluOp, NegativeInputsMapToZero) {
  const Tensor x({2, 3}, -0.5);
  EXPECT_EQ(ops::relu_forward(x), Tensor({2, 3}, 0.0));
}

TEST(MaxPoolOp, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(600 + seed);
    Tensor x = random_tensor({2, 2, 4, 6}, rng);
    const auto fwd = ops::maxpool_forward(x, 2, 2);
    const Tensor r = random_tensor(fwd.y.shape(), rng);
    auto s = [&] { return dot(r, ops::maxpool_forward(x, 2, 2).y); };
    EXPECT_LT(max_relative_error(x, ops::maxpool_backward(x.shape(), fwd.argmax, r), s, kStep), kTol)
        << "seed " << seed;
  }
}

TEST(MaxPoolOp, ConstantInputRoutesToFirstIndex) {
  const Tensor x({1, 1, 4, 4}, 3.0);
  const auto fwd = ops::maxpool_forward(x, 2, 2);
  EXPECT_EQ(fwd.y, Tensor({1, 1, 2, 2}, 3.0));
  const std::vector<std::size_t> expected{0, 2, 8, 10};
  EXPECT_EQ(fwd.argmax, expected);
  const auto dx = ops::maxpool_backward(x.shape(), fwd.argmax, Tensor({1, 1, 2, 2}, 1.0));
  double total = 0.0;
  for (double v : dx.data()) total += v;
  EXPECT_EQ(total, 4.0);
  EXPECT_EQ(dx[0], 1.0);
  EXPECT_EQ(dx[1], 0.0);
  EXPECT_EQ(dx[4], 0.0);
}

TEST(ResidualAddOp, SumsAndChecksShapes) {
  Rng rng(8);
  const Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
  const Tensor y = ops::residual_add(a, b);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], a[i] + b[i]);
  EXPECT_THROW(ops::residual_add(a, Tensor({3, 2})), ShapeMismatch);
}

TEST(SoftmaxOp, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(700 + seed);
    Tensor x = random_tensor({3, 5}, rng, 3.0);
    const Tensor r = random_tensor({3, 5}, rng);
    auto s = [&] { return dot(r, ops::softmax_forward(x)); };
    const Tensor y = ops::softmax_forward(x);
    EXPECT_LT(max_relative_error(x, ops::softmax_backward(y, r), s, kStep), kTol) << "seed " << seed;
  }
}

TEST(SoftmaxOp, RowsSumToOneAndEqualLogitsAreUniform) {
  Rng rng(9);
  const Tensor y = ops::softmax_forward(random_tensor({4, 7}, rng, 50.0));
  for (std::size_t n = 0; n < 4; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < 7; ++k) s += y[n * 7 + k];
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
  const Tensor u = ops::softmax_forward(Tensor({2, 4}, 3.7));
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  const Tensor big = ops::softmax_forward(Tensor({1, 2}, std::vector<double>{1000.0, 0.0}));
  EXPECT_EQ(big[0], 1.0);
  EXPECT_TRUE(std::isfinite(big[1]));
}

TEST(DenseOp, IdentityWeightsPassInputThrough) {
  Rng rng(4);
  const Tensor x = random_tensor({3, 4}, rng);
  Tensor w({4, 4});
  for (std::size_t i = 0; i < 4; ++i) w[i * 4 + i] = 1.0;
  EXPECT_EQ(ops::dense_forward(x, w, Tensor({4})), x);
  EXPECT_THROW(ops::dense_forward(x, Tensor({4, 3}), Tensor({4})), ShapeMismatch);
}

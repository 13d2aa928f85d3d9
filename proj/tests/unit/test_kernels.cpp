#include <gtest/gtest.h>

#include <cmath>

#include "support/helpers.hpp"
#include "vmbh/error.hpp"
#include "vmbh/nn.hpp"
#include "vmbh/ops.hpp"
#include "vmbh/rng.hpp"

using namespace vmbh;
using testing_support::vec;

TEST(Conv2d, MatchesLoopOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t ci = 1 + rng.index(3), co = 1 + rng.index(3), h = 3 + rng.index(5), w = 3 + rng.index(5);
    std::size_t k = 1 + 2 * rng.index(2), stride = 1 + rng.index(2), pad = rng.index(2);
    auto x = rng.normal_tensor({ci, h, w}, 1.0);
    auto wt = rng.normal_tensor({co, ci, k, k}, 1.0);
    auto b = trial % 2 ? rng.normal_tensor({co}, 1.0) : Tensor();
    std::size_t ho = 0, wo = 0;
    auto expected = oracle::conv2d(vec(x), ci, h, w, vec(wt), co, k, testing_support::vec_or_empty(b), stride, pad,
                                   ho, wo);
    auto y = conv2d(x, wt, b, stride, pad);
    ASSERT_EQ(y.shape(), (Shape{co, ho, wo}));
    EXPECT_LE(oracle::max_abs_diff(vec(y), expected), 1e-12);
  }
}

TEST(Conv2d, RejectsChannelMismatch) {
  EXPECT_THROW(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 3, 1, 1}), Tensor(), 1, 0), DimensionError);
}

TEST(Conv2d, OneByOneMatmulPathAgrees) {
  Rng rng(22);
  auto layer = nn::Conv2dLayer::init(3, 5, 1, 1, 0, rng);
  auto x = rng.normal_tensor({3, 4, 6}, 1.0);
  EXPECT_LE(oracle::max_abs_diff(vec(nn::conv2d(layer, x)), vec(nn::conv1x1_as_matmul(layer, x))), 1e-13);
  auto no_bias = nn::Conv2dLayer::init(3, 5, 1, 1, 0, rng, false);
  EXPECT_FALSE(no_bias.bias.defined());
  EXPECT_LE(oracle::max_abs_diff(vec(nn::conv2d(no_bias, x)), vec(nn::conv1x1_as_matmul(no_bias, x))), 1e-13);
}

TEST(DepthwiseConv1d, CausalLoopOracle) {
  Rng rng(23);
  const std::size_t L = 7, C = 3, K = 4;
  auto x = rng.normal_tensor({L, C}, 1.0);
  auto w = rng.normal_tensor({C, K}, 1.0);
  auto b = rng.normal_tensor({C}, 1.0);
  auto y = vec(depthwise_conv1d(x, w, b));
  auto X = vec(x), W = vec(w), B = vec(b);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      double s = B[c];
      for (std::size_t j = 0; j < K; ++j) {
        long src = static_cast<long>(t) - static_cast<long>(K - 1) + static_cast<long>(j);
        if (src >= 0) s += W[c * K + j] * X[src * C + c];
      }
      EXPECT_NEAR(y[t * C + c], s, 1e-13);
    }
}

TEST(GridSample, MatchesTentKernelOracle) {
  Rng rng(24);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t c = 1 + rng.index(3), h = 2 + rng.index(5), w = 2 + rng.index(5), n = 1 + rng.index(6);
    auto f = rng.normal_tensor({c, h, w}, 1.0);
    std::vector<double> pts;
    for (std::size_t i = 0; i < n; ++i) {
      // Includes points outside the map to exercise border clamping.
      pts.push_back(rng.uniform(-1.0, static_cast<double>(w)));
      pts.push_back(rng.uniform(-1.0, static_cast<double>(h)));
    }
    auto got = grid_sample(f, Tensor::from({n, 2}, pts));
    worst = std::max(worst, oracle::max_abs_diff(vec(got), oracle::bilinear(vec(f), c, h, w, pts)));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(GridSample, ReproducesBilinearFunctionsExactly) {
  // f(x,y) = a + bx + cy + dxy is reproduced exactly by bilinear interpolation.
  const std::size_t h = 5, w = 6;
  std::vector<double> f(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t q = 0; q < w; ++q) f[r * w + q] = 0.5 + 2.0 * q - 1.5 * r + 0.25 * q * r;
  auto map = Tensor::from({1, h, w}, f);
  Rng rng(25);
  for (int i = 0; i < 50; ++i) {
    double x = rng.uniform(0.0, w - 1.0), y = rng.uniform(0.0, h - 1.0);
    double got = grid_sample(map, Tensor::from({1, 2}, {x, y})).item();
    EXPECT_NEAR(got, 0.5 + 2.0 * x - 1.5 * y + 0.25 * x * y, 1e-12);
  }
}

TEST(GridSample, IntegerPointsReadPixels) {
  auto map = Tensor::from({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_DOUBLE_EQ(grid_sample(map, Tensor::from({1, 2}, {2.0, 1.0})).item(), 6.0);
  EXPECT_DOUBLE_EQ(grid_sample(map, Tensor::from({1, 2}, {9.0, -3.0})).item(), 3.0);
}

TEST(Rodrigues, MatchesQuaternionOracle) {
  Rng rng(26);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    // Mix of ordinary, tiny and near-pi rotations.
    double scale = trial % 10 == 0 ? 1e-9 : (trial % 10 == 1 ? 3.1 : 1.0);
    double ax = rng.normal(0, scale), ay = rng.normal(0, scale), az = rng.normal(0, scale);
    auto q = oracle::quaternion_rotation(ax, ay, az);
    auto r = rodrigues(Tensor::from({3}, {ax, ay, az}));
    worst = std::max(worst, oracle::max_abs_diff(vec(r), std::vector<double>(q.begin(), q.end())));
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(Rodrigues, ZeroIsIdentityAndResultIsOrthonormal) {
  EXPECT_EQ(vec(rodrigues(Tensor::zeros({3}))), (std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Rng rng(27);
  auto r = vec(rodrigues(rng.normal_tensor({3}, 1.0)));
  auto rrt = oracle::matmul(r, vec(transpose(Tensor::from({3, 3}, r))), 3, 3, 3);
  EXPECT_LE(oracle::max_abs_diff(rrt, {1, 0, 0, 0, 1, 0, 0, 0, 1}), 1e-14);
  double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
               r[2] * (r[3] * r[7] - r[4] * r[6]);
  EXPECT_NEAR(det, 1.0, 1e-14);
}

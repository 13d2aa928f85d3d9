#include <gtest/gtest.h>

#include <cmath>

#include "support/helpers.hpp"
#include "vmbh/error.hpp"
#include "vmbh/flops.hpp"
#include "vmbh/ops.hpp"
#include "vmbh/rng.hpp"
#include "vmbh/tensor.hpp"

using namespace vmbh;

TEST(Tensor, FactoriesAndAccessors) {
  auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(), 2u);
  EXPECT_DOUBLE_EQ(t.at({1, 2}), 6.0);
  EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(t.item(), ContractError);
}

TEST(Tensor, GradientAccumulatesOverSharedUses) {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  // f = sum(x*x + 3x) -> df/dx = 2x + 3
  auto f = sum(add(mul(x, x), scale(x, 3.0)));
  f.backward();
  EXPECT_EQ(x.grad()[0], 5.0);
  EXPECT_EQ(x.grad()[1], 7.0);
  EXPECT_EQ(x.grad()[2], 9.0);
}

TEST(Tensor, SecondBackwardWithoutZeroGradIsRejected) {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto f = sum(square(x));
  f.backward();
  EXPECT_THROW(f.backward(), ContractError);
  x.zero_grad();
  EXPECT_NO_THROW(f.backward());
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Tensor, BackwardNeedsScalar) {
  auto x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(square(x).backward(), ContractError);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  auto x = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    auto y = square(x);
    EXPECT_TRUE(y.is_leaf());
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(square(x).is_leaf());
}

TEST(Tensor, DetachCutsTheGraph) {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto y = square(x).detach();
  EXPECT_TRUE(y.is_leaf());
  EXPECT_EQ(y.to_vector(), (std::vector<double>{1, 4}));
}

TEST(Tensor, MutableDataOnlyOnLeaves) {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto y = square(x);
  EXPECT_THROW(y.mutable_data(), ContractError);
  x.mutable_data()[0] = 5;
  EXPECT_EQ(x.data()[0], 5.0);
}

TEST(Ops, BroadcastShapes) {
  EXPECT_EQ(broadcast_shape({4, 3}, {3}), (Shape{4, 3}));
  EXPECT_EQ(broadcast_shape({2, 1, 3}, {4, 1}), (Shape{2, 4, 3}));
  EXPECT_THROW(broadcast_shape({4, 3}, {2}), DimensionError);
}

TEST(Ops, BroadcastGradientReducesOverExpandedAxes) {
  auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto b = Tensor::from({3}, {1, 1, 1}, true);
  sum(mul(a, b)).backward();
  EXPECT_EQ(b.grad_tensor().to_vector(), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(a.grad_tensor().to_vector(), (std::vector<double>(6, 1.0)));
}

TEST(Ops, Reductions) {
  auto x = Tensor::from({2, 3}, {1, 5, 3, 4, 2, 6});
  EXPECT_EQ(sum(x, {0}).to_vector(), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(mean(x, {1}).to_vector(), (std::vector<double>{3, 4}));
  EXPECT_EQ(max(x, {-1}).to_vector(), (std::vector<double>{5, 6}));
  EXPECT_EQ(sum(x, {1}, true).shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(sum(x).item(), 21.0);
  EXPECT_THROW(sum(x, {2}), ContractError);
}

TEST(Ops, MaxGradientGoesToFirstMaximum) {
  auto x = Tensor::from({4}, {1, 3, 3, 0}, true);
  max(x).backward();
  EXPECT_EQ(x.grad_tensor().to_vector(), (std::vector<double>{0, 1, 0, 0}));
}

TEST(Ops, ShapeOpsRoundTrip) {
  Rng rng(3);
  auto x = rng.normal_tensor({2, 3, 4}, 1.0);
  auto p = permute(x, {2, 0, 1});
  EXPECT_EQ(p.shape(), (Shape{4, 2, 3}));
  EXPECT_EQ(permute(p, {1, 2, 0}).to_vector(), x.to_vector());
  auto parts = concat({slice(x, 1, 0, 1), slice(x, 1, 1, 3)}, 1);
  EXPECT_EQ(parts.to_vector(), x.to_vector());
  EXPECT_EQ(transpose(transpose(reshape(x, {6, 4}))).to_vector(), x.to_vector());
  EXPECT_THROW(reshape(x, {5, 5}), DimensionError);
  EXPECT_THROW(slice(x, 1, 2, 5), ContractError);
}

TEST(Ops, MatmulMatchesLoopOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t m = 1 + rng.index(5), k = 1 + rng.index(5), n = 1 + rng.index(5);
    auto a = rng.normal_tensor({m, k}, 1.0);
    auto b = rng.normal_tensor({k, n}, 1.0);
    auto expected = oracle::matmul(a.to_vector(), b.to_vector(), m, k, n);
    EXPECT_LE(oracle::max_abs_diff(matmul(a, b).to_vector(), expected), 1e-12);
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Ops, SoftmaxRowsAreDistributions) {
  Rng rng(5);
  auto x = rng.normal_tensor({4, 7}, 30.0);
  auto s = softmax(x, 1).to_vector();
  for (int r = 0; r < 4; ++r) {
    double total = 0;
    for (int c = 0; c < 7; ++c) {
      EXPECT_GE(s[r * 7 + c], 0.0);
      total += s[r * 7 + c];
    }
    EXPECT_NEAR(total, 1.0, 1e-14);
  }
}

TEST(Ops, SoftmaxIsShiftInvariant) {
  Rng rng(6);
  auto x = rng.normal_tensor({3, 5}, 1.0);
  auto shifted = add_scalar(x, 1000.0);
  EXPECT_LE(oracle::max_abs_diff(softmax(x, 1).to_vector(), softmax(shifted, 1).to_vector()), 1e-13);
}

TEST(Ops, NormalizeLastHasZeroMeanUnitVariance) {
  Rng rng(8);
  auto x = rng.normal_tensor({3, 16}, 4.0);
  auto y = normalize_last(x, 1e-12).to_vector();
  for (int r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (int c = 0; c < 16; ++c) m += y[r * 16 + c] / 16;
    for (int c = 0; c < 16; ++c) v += (y[r * 16 + c] - m) * (y[r * 16 + c] - m) / 16;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-11);
  }
  EXPECT_THROW(normalize_last(x, 0.0), ContractError);
}

TEST(Ops, ElementwiseValues) {
  auto x = Tensor::from({3}, {-1.0, 0.0, 2.0});
  EXPECT_EQ(relu(x).to_vector(), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(abs(x).to_vector(), (std::vector<double>{1, 0, 2}));
  EXPECT_NEAR(sigmoid(x).to_vector()[1], 0.5, 1e-15);
  EXPECT_NEAR(silu(x).to_vector()[2], 2.0 / (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(softplus(x).to_vector()[0], std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(softplus(Tensor::from({1}, {800.0})).item(), 800.0, 1e-12);
}

TEST(Ops, AbsSubgradientIsZeroAtZero) {
  auto x = Tensor::from({3}, {-2.0, 0.0, 2.0}, true);
  sum(abs(x)).backward();
  EXPECT_EQ(x.grad_tensor().to_vector(), (std::vector<double>{-1, 0, 1}));
}

TEST(Flops, CountsHeavyOpsOnly) {
  flops::Scope scope;
  auto a = Tensor::ones({2, 3});
  auto b = Tensor::ones({3, 4});
  matmul(a, b);
  EXPECT_EQ(scope.elapsed(), 2u * 2 * 3 * 4);
  add(a, a);
  relu(a);
  EXPECT_EQ(scope.elapsed(), 48u);
}

TEST(Flops, ScopesNest) {
  flops::reset();
  flops::Scope outer;
  matmul(Tensor::ones({1, 1}), Tensor::ones({1, 1}));
  {
    flops::Scope inner;
    matmul(Tensor::ones({2, 2}), Tensor::ones({2, 2}));
    EXPECT_EQ(inner.elapsed(), 16u);
  }
  EXPECT_EQ(outer.elapsed(), 18u);
}

TEST(Flops, OneByOneConvCount) {
  flops::Scope scope;
  conv2d(Tensor::ones({2, 4, 4}), Tensor::ones({2, 2, 1, 1}), Tensor(), 1, 0);
  EXPECT_EQ(scope.elapsed(), 128u);
}

TEST(Rng, DeterministicPerSeed) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) {
    double x = a.normal();
    EXPECT_EQ(x, b.normal());
    EXPECT_NE(x, c.normal());
  }
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    double v = u.uniform();
    ASSERT_GE(v, 0.0);
    ASSERT_LT(v, 1.0);
    ASSERT_LT(u.index(7), 7u);
  }
}

TEST(GradientFault, ScalesTheNamedRule) {
  auto a = Tensor::from({1, 1}, {2.0}, true);
  auto b = Tensor::from({1, 1}, {3.0}, true);
  set_gradient_fault("matmul");
  sum(matmul(a, b)).backward();
  set_gradient_fault("");
  EXPECT_DOUBLE_EQ(a.grad()[0], 4.5);
}

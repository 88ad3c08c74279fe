// Copyright 2026 The pcdarts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "pcdarts/core/primitives.hpp"

namespace pcdarts {
namespace {

using T = Tensor<double>;

TEST(Conv2d, AllOnesKernelCountsNeighbours) {
  auto x = T::full({1, 1, 3, 3}, 1.0);
  auto w = T::full({1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, w, {1, 1, 1, 1});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(y[4], 9.0);
  EXPECT_EQ(y[0], 4.0);
  EXPECT_EQ(y[2], 4.0);
  EXPECT_EQ(y[6], 4.0);
  EXPECT_EQ(y[8], 4.0);
  EXPECT_EQ(y[1], 6.0);
}

TEST(Conv2d, OutputShapeArithmetic) {
  std::mt19937_64 rng(1);
  auto x = T::randn({2, 4, 9, 7}, rng);
  auto w = T::randn({6, 2, 3, 3}, rng);
  auto y = conv2d(x, w, {2, 2, 2, 2});
  // (9 + 4 - 5) / 2 + 1 = 5 ; (7 + 4 - 5) / 2 + 1 = 4
  EXPECT_EQ(y.shape(), (Shape{2, 6, 5, 4}));
}

TEST(Conv2d, RejectsBadGroups) {
  auto x = T::zeros({1, 3, 4, 4});
  auto w = T::zeros({4, 1, 1, 1});
  EXPECT_THROW(conv2d(x, w, {1, 0, 1, 2}), ShapeError);
  try {
    conv2d(x, T::zeros({4, 2, 1, 1}), {});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv2d"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(4,2,1,1)"), std::string::npos);
  }
}

TEST(Softmax, SymmetricInputGivesHalves) {
  auto y = softmax(T({2}, {0.0, 0.0}), 0);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, AlongInnerAxis) {
  auto y = softmax(T({2, 2}, {0.0, std::log(3.0), 1.0, 1.0}), 1);
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
  EXPECT_NEAR(y[2], 0.5, 1e-15);
}

TEST(CrossEntropy, UniformLogitsGiveLogClasses) {
  auto logits = T::zeros({3, 10});
  auto loss = cross_entropy(logits, {0, 4, 9});
  EXPECT_NEAR(loss.item(), std::log(10.0), 1e-12);
  EXPECT_NEAR(loss.item(), 2.302585, 1e-6);
}

TEST(CrossEntropy, GradientIsProbabilitiesMinusOneHot) {
  std::mt19937_64 rng(3);
  auto logits = T::randn({2, 4}, rng, 1.0, true);
  auto loss = cross_entropy(logits, {1, 3});
  backward(loss);
  auto p = softmax(logits.clone(), 1);
  const std::vector<int> labels{1, 3};
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 4; ++k) {
      const double onehot = static_cast<int>(k) == labels[b] ? 1.0 : 0.0;
      EXPECT_NEAR(logits.grad()[b * 4 + k], (p[b * 4 + k] - onehot) / 2.0, 1e-14);
    }
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
  EXPECT_THROW(cross_entropy(T::zeros({1, 3}), {3}), ShapeError);
}

TEST(Backward, ProductRule) {
  auto w = T::scalar(2.0, true);
  auto x = T::scalar(3.0, true);
  backward(mul(w, x));
  EXPECT_EQ(w.grad()[0], 3.0);
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Backward, AccumulatesAcrossBranches) {
  // y = x*a + x*b + x*c with x used by three branches.
  auto x = T({2}, {1.5, -2.0}, true);
  auto a = T({2}, {1.0, 2.0});
  auto b = T({2}, {3.0, 4.0});
  auto c = T({2}, {-1.0, 0.5});
  backward(sum_all(add_n<double>({mul(x, a), mul(x, b), mul(x, c)})));
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 6.5);
}

TEST(Backward, GradientsAccumulateAcrossCalls) {
  auto x = T::scalar(1.0, true);
  backward(scale(x, 2.0));
  backward(scale(x, 2.0));
  EXPECT_EQ(x.grad()[0], 4.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, RejectsNonScalar) {
  auto x = T({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
  Tape<double>::local().clear();
}

TEST(Tape, RecordsInTopologicalOrder) {
  Tape<double>::local().clear();
  auto x = T::scalar(1.0, true);
  auto y = relu(scale(x, 2.0));
  auto z = add(y, x);
  const auto& rec = Tape<double>::local().records();
  ASSERT_EQ(rec.size(), 3u);
  EXPECT_STREQ(rec[0].primitive, "scale");
  EXPECT_STREQ(rec[1].primitive, "relu");
  EXPECT_STREQ(rec[2].primitive, "add");
  EXPECT_TRUE(rec[2].output.get() == z.node());
  Tape<double>::local().clear();
}

TEST(Tape, NoGradGuardSuppressesRecording) {
  Tape<double>::local().clear();
  auto x = T::scalar(1.0, true);
  {
    NoGradGuard<double> guard;
    auto y = scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(Tape<double>::local().empty());
}

TEST(Numerics, NonFiniteOutputIsFatal) {
  auto x = T({1}, {std::numeric_limits<double>::max()});
  try {
    scale(x, 10.0);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.primitive(), "scale");
  }
}

TEST(BatchNorm, EvalModeIsPerChannelAffine) {
  std::mt19937_64 rng(7);
  auto rm = T({2}, {0.5, -1.0});
  auto rv = T({2}, {4.0, 0.25});
  auto gamma = T({2}, {2.0, -1.0});
  auto beta = T({2}, {0.1, 0.2});
  BatchNormAttrs attrs{false, 0.1, 0.0};
  auto x1 = T::randn({3, 2, 2, 2}, rng);
  auto y1 = batch_norm(x1, gamma, beta, rm, rv, attrs);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t idx = (b * 2 + c) * 4 + i;
        const double expect = (x1[idx] - rm[c]) / std::sqrt(rv[c]) * gamma[c] + beta[c];
        EXPECT_NEAR(y1[idx], expect, 1e-14);
      }
  // No dependence on the other batch members.
  auto x2 = x1.clone();
  x2.mutable_data()[0] += 100.0;
  auto y2 = batch_norm(x2, gamma, beta, rm, rv, attrs);
  for (std::size_t i = 1; i < y1.numel(); ++i) EXPECT_EQ(y1[i], y2[i]);
  EXPECT_EQ(rm[0], 0.5);  // statistics untouched in eval mode
}

TEST(BatchNorm, TrainModeNormalisesAndTracksStatistics) {
  std::mt19937_64 rng(8);
  auto x = T::randn({4, 3, 2, 2}, rng, 2.0);
  auto rm = T::zeros({3});
  auto rv = T::full({3}, 1.0);
  auto y = batch_norm(x, T(), T(), rm, rv, BatchNormAttrs{true, 0.1, 1e-5});
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, sq = 0, xmean = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 4; ++i) {
        mean += y[(b * 3 + c) * 4 + i];
        xmean += x[(b * 3 + c) * 4 + i];
      }
    mean /= 16;
    xmean /= 16;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 4; ++i)
        sq += (y[(b * 3 + c) * 4 + i] - mean) * (y[(b * 3 + c) * 4 + i] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / 16, 1.0, 1e-4);
    EXPECT_NEAR(rm[c], 0.1 * xmean, 1e-12);
  }
}

TEST(Pooling, ShapesAndValues) {
  auto x = T({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto mx = max_pool2d(x, {3, 1, 1});
  EXPECT_EQ(mx.shape(), (Shape{1, 1, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(mx[i], 4.0);
  auto av = avg_pool2d(x, {3, 1, 1});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(av[i], 2.5);
  auto half = max_pool2d(T::zeros({1, 1, 4, 6}), {2, 2, 0});
  EXPECT_EQ(half.shape(), (Shape{1, 1, 2, 3}));
}

TEST(ChannelOps, ConcatSliceRoundTrip) {
  std::mt19937_64 rng(11);
  auto x = T::randn({2, 5, 3, 3}, rng);
  auto a = slice_channels(x, 0, 2);
  auto b = slice_channels(x, 2, 5);
  auto y = concat_channels<double>({a, b});
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
  EXPECT_THROW(slice_channels(x, 3, 3), ShapeError);
  EXPECT_THROW(concat_channels<double>({a, T::zeros({2, 1, 2, 2})}), ShapeError);
}

TEST(Matmul, SmallProduct) {
  auto a = T({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = T({3, 1}, {1, 0, -1});
  auto c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], -2.0);
  EXPECT_EQ(c[1], -2.0);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Determinism, SameSeedSameValues) {
  auto run = [] {
    std::mt19937_64 rng(42);
    auto x = Tensor<float>::randn({2, 3, 5, 5}, rng);
    auto w = Tensor<float>::randn({3, 1, 3, 3}, rng);
    return conv2d(relu(x), w, {1, 1, 1, 3});
  };
  auto a = run();
  auto b = run();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

}  // namespace
}  // namespace pcdarts

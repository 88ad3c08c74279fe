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
#include <numbers>

#include <gtest/gtest.h>

#include "pcdarts/core/optim.hpp"
#include "pcdarts/core/primitives.hpp"

namespace pcdarts {
namespace {

using T = Tensor<double>;

void set_grad(T& p, std::initializer_list<double> g) {
  auto dst = grad_sink(*p.node());
  std::size_t i = 0;
  for (double v : g) dst[i++] = v;
}

TEST(Sgd, PlainStep) {
  auto p = T::scalar(0.0, true);
  set_grad(p, {1.0});
  Sgd<double> opt({p}, {0.0, 0.0});
  opt.step(0.1);
  EXPECT_DOUBLE_EQ(p.item(), -0.1);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Sgd, WeightDecayAddsToGradient) {
  auto p = T::scalar(1.0, true);
  set_grad(p, {0.0});
  Sgd<double> opt({p}, {0.0, 0.1});
  opt.step(1.0);
  EXPECT_DOUBLE_EQ(p.item(), 0.9);
}

TEST(Sgd, MomentumBuffer) {
  auto p = T::scalar(0.0, true);
  Sgd<double> opt({p}, {0.9, 0.0});
  set_grad(p, {1.0});
  opt.step(1.0);  // buf = 1
  set_grad(p, {1.0});
  opt.step(1.0);  // buf = 0.9 * 1 + 1
  EXPECT_DOUBLE_EQ(p.item(), -1.0 - 1.9);
}

TEST(Sgd, MissingGradientNamesParameter) {
  auto p = T::scalar(0.0, true);
  p.set_name("cells.0.weight");
  Sgd<double> opt({p}, {});
  try {
    opt.step(0.1);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("cells.0.weight"), std::string::npos);
  }
}

TEST(Sgd, GradsAreNotZeroedImplicitly) {
  auto p = T::scalar(0.0, true);
  set_grad(p, {1.0});
  Sgd<double> opt({p}, {0.0, 0.0});
  opt.step(0.1);
  EXPECT_TRUE(p.has_grad());
  EXPECT_EQ(p.grad()[0], 1.0);
  opt.zero_grad();
  EXPECT_FALSE(p.has_grad());
}

TEST(Adam, FirstTwoStepsMatchHandComputation) {
  const double lr = 0.1, b1 = 0.5, b2 = 0.999, eps = 1e-8;
  auto p = T::scalar(1.0, true);
  Adam<double> opt({p}, {b1, b2, eps, 0.0});

  set_grad(p, {0.5});
  opt.step(lr);
  // m1 = 0.25, v1 = 0.00025, mhat = 0.5, vhat = 0.25 -> step = lr * 0.5 / (0.5 + eps)
  const double p1 = 1.0 - lr * 0.5 / (0.5 + eps);
  EXPECT_NEAR(p.item(), p1, 1e-15);
  EXPECT_NEAR(1.0 - p.item(), lr, 1e-8);  // first step has magnitude lr * sign(g)

  opt.zero_grad();
  set_grad(p, {-1.0});
  opt.step(lr);
  const double m2 = 0.5 * 0.25 + 0.5 * -1.0;
  const double v2 = 0.999 * 0.00025 + 0.001 * 1.0;
  const double mhat = m2 / (1 - 0.25);
  const double vhat = v2 / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p.item(), p1 - lr * mhat / (std::sqrt(vhat) + eps), 1e-14);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(Adam, WeightDecayEntersMoments) {
  auto p = T::scalar(2.0, true);
  Adam<double> opt({p}, {0.5, 0.999, 1e-8, 1e-3});
  set_grad(p, {0.0});
  opt.step(0.01);
  // d = 2e-3 > 0, so the first step moves by ~lr toward zero.
  EXPECT_NEAR(p.item(), 2.0 - 0.01, 1e-7);
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.1), 0.1);
  EXPECT_NEAR(cosine_lr(100, 100, 0.1), 0.0, 1e-12);
  EXPECT_NEAR(cosine_lr(50, 100, 0.1), 0.05, 1e-15);
  EXPECT_THROW(cosine_lr(101, 100, 0.1), std::invalid_argument);
  EXPECT_THROW(cosine_lr(0, 0, 0.1), std::invalid_argument);
}

TEST(CosineLr, MonotoneNonIncreasing) {
  double prev = cosine_lr(0, 37, 1.0);
  for (std::size_t t = 1; t <= 37; ++t) {
    const double lr = cosine_lr(t, 37, 1.0);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(ClipGradNorm, RescalesAboveThreshold) {
  auto p = T({2}, {0.0, 0.0}, true);
  set_grad(p, {3.0, 4.0});
  std::vector<T> ps{p};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(p.grad()[0], 0.6, 1e-6);
  EXPECT_NEAR(p.grad()[1], 0.8, 1e-6);
}

}  // namespace
}  // namespace pcdarts

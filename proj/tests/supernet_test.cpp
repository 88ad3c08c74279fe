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
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "oracles/plain_darts.hpp"
#include "pcdarts/search/supernet.hpp"

namespace pcdarts {
namespace {

SuperNetConfig tiny(std::size_t k, bool pc, bool en) {
  SuperNetConfig cfg;
  cfg.init_channels = 4;
  cfg.cells = 3;
  cfg.nodes = 4;
  cfg.classes = 3;
  cfg.stem_multiplier = 2;
  cfg.k = k;
  cfg.partial_connection = pc;
  cfg.edge_normalization = en;
  cfg.seed = 5;
  return cfg;
}

TEST(SuperNet, OutputShapeDefaultLayout) {
  SuperNetConfig cfg;  // L=8, C0=16, N=6, K=4
  cfg.classes = 10;
  SuperNet<float> net(cfg);
  std::mt19937_64 rng(0);
  auto x = Tensor<float>::randn({2, 3, 32, 32}, rng, 1.0f);
  NoGradGuard<float> ng;
  auto y = net.forward(x, Mode::kTrain);
  EXPECT_EQ(y.shape(), (Shape{2, 10}));
  for (float v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(SuperNet, RejectsWrongInputChannels) {
  SuperNet<double> net(tiny(2, true, true));
  std::mt19937_64 rng(0);
  auto x = Tensor<double>::randn({1, 1, 8, 8}, rng, 1.0);
  EXPECT_THROW(net.forward(x, Mode::kTrain), ShapeError);
}

TEST(SuperNet, ChannelsBelowKRejected) {
  auto cfg = tiny(8, true, true);
  cfg.init_channels = 4;
  EXPECT_THROW(SuperNet<double> net(cfg), std::invalid_argument);
}

TEST(SuperNet, MatchesPlainDartsWithFullChannels) {
  for (std::size_t cells : {2u, 3u}) {
    auto cfg = tiny(1, true, false);
    cfg.cells = cells;
    cfg.nodes = 3;
    SuperNet<double> net(cfg);
    std::mt19937_64 rng(21);
    // move the architecture away from uniform so the mixture is non-trivial
    for (auto* t : {&net.arch().alpha_normal, &net.arch().alpha_reduce})
      for (auto& v : t->mutable_data()) v = std::normal_distribution<double>(0, 0.8)(rng);
    auto x = Tensor<double>::randn({2, 3, 8, 8}, rng, 1.0);
    auto y = net.forward(x, Mode::kTrain);

    std::map<std::string, std::vector<double>> named;
    for (const auto& [n, t] : net.named()) named[n] = {t.data().begin(), t.data().end()};
    testing::plain::NetSpec spec{cfg.init_channels, cfg.cells, cfg.nodes, cfg.classes,
                                 cfg.stem_multiplier, {}};
    for (auto k : cfg.ops) spec.ops.emplace_back(op_name(k));
    testing::plain::Array4 in(2, 3, 8, 8);
    std::copy(x.data().begin(), x.data().end(), in.v.begin());
    const auto& an = net.arch().alpha_normal.data();
    const auto& ar = net.arch().alpha_reduce.data();
    auto ref = testing::plain::forward(
        spec, in, [&](const std::string& n) -> const std::vector<double>& { return named.at(n); },
        {an.begin(), an.end()}, {ar.begin(), ar.end()});
    ASSERT_EQ(ref.size(), y.numel());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(y.data()[i], ref[i]) << i;
  }
}

TEST(SuperNet, ArchParametersFollowEdgeNormalization) {
  SuperNet<double> with(tiny(2, true, true));
  SuperNet<double> without(tiny(2, true, false));
  EXPECT_EQ(with.arch_parameters().size(), 4u);
  EXPECT_EQ(without.arch_parameters().size(), 2u);
}

TEST(SuperNet, GradientsReachEveryArchTensor) {
  SuperNet<double> net(tiny(2, true, true));
  std::mt19937_64 rng(1);
  auto x = Tensor<double>::randn({2, 3, 8, 8}, rng, 1.0);
  auto loss = cross_entropy(net.forward(x, Mode::kTrain), std::vector<int>{0, 2});
  backward(loss);
  for (auto& p : net.arch_parameters()) {
    ASSERT_TRUE(p.has_grad()) << p.name();
    double n = 0;
    for (double g : p.grad()) n += g * g;
    EXPECT_GT(n, 0.0) << p.name();
  }
}

TEST(SuperNet, TensorNamesAreUniqueAndStable) {
  SuperNet<double> a(tiny(2, true, true));
  SuperNet<double> b(tiny(2, true, true));
  std::set<std::string> names;
  for (const auto& [n, t] : a.named()) EXPECT_TRUE(names.insert(n).second) << n;
  EXPECT_TRUE(names.count("stem.conv.weight"));
  EXPECT_TRUE(names.count("classifier.weight"));
  EXPECT_TRUE(names.count("cells.0.edge0_2.sep_conv_3x3.0.dw.weight"));
  ASSERT_EQ(a.named().size(), b.named().size());
  for (std::size_t i = 0; i < a.named().size(); ++i) {
    EXPECT_EQ(a.named()[i].first, b.named()[i].first);
    EXPECT_EQ(std::vector<double>(a.named()[i].second.data().begin(), a.named()[i].second.data().end()),
              std::vector<double>(b.named()[i].second.data().begin(), b.named()[i].second.data().end()));
  }
}

TEST(SuperNet, CheckpointRoundTripReproducesOutput) {
  auto cfg = tiny(2, true, true);
  SuperNet<double> a(cfg);
  std::mt19937_64 rng(3);
  auto x = Tensor<double>::randn({2, 3, 8, 8}, rng, 1.0);
  {
    NoGradGuard<double> ng;
    a.forward(x, Mode::kTrain);  // move running stats
  }
  const auto dir = std::filesystem::temp_directory_path() / "pcdarts_supernet_test";
  std::filesystem::create_directories(dir);
  save_checkpoint((dir / "w.pcnt").string(), a.named_tensors());
  save_checkpoint((dir / "a.pcnt").string(), a.arch().to_named());

  cfg.seed = 99;
  SuperNet<double> b(cfg);
  b.load_named(load_checkpoint((dir / "w.pcnt").string()));
  b.set_arch(arch_params_from_named<double>(load_checkpoint((dir / "a.pcnt").string()), cfg.nodes));
  NoGradGuard<double> ng;
  auto ya = a.forward(x, Mode::kEval);
  auto yb = b.forward(x, Mode::kEval);
  for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_EQ(ya.data()[i], yb.data()[i]);
  std::filesystem::remove_all(dir);
}

TEST(SuperNet, LoadRejectsShapeMismatch) {
  SuperNet<double> a(tiny(2, true, true));
  auto named = a.named_tensors();
  named.at("classifier.weight").shape = {1, 1};
  named.at("classifier.weight").values = {0.0};
  EXPECT_THROW(a.load_named(named), CheckpointError);
}

TEST(SuperNet, RandomMaskModeRuns) {
  auto cfg = tiny(2, true, true);
  cfg.mask_mode = MaskMode::kRandom;
  SuperNet<double> net(cfg);
  std::mt19937_64 rng(4);
  auto x = Tensor<double>::randn({2, 3, 8, 8}, rng, 1.0);
  NoGradGuard<double> ng;
  auto y = net.forward(x, Mode::kTrain);
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
}

TEST(SuperNet, PeakActivationScalesWithK) {
  auto peak = [](std::size_t k) {
    SuperNetConfig cfg;
    cfg.init_channels = 16;
    cfg.cells = 3;
    cfg.nodes = 4;
    cfg.k = k;
    SuperNet<float> net(cfg);
    std::mt19937_64 rng(0);
    auto x = Tensor<float>::randn({2, 3, 16, 16}, rng, 1.0f);
    auto& ctr = ActivationCounter::local();
    ctr.reset_peak();
    const std::size_t base = ctr.live();
    auto y = net.forward(x, Mode::kTrain);
    const std::size_t p = ctr.peak() - base;
    Tape<float>::local().clear();
    return static_cast<double>(p);
  };
  const double ratio = peak(4) / peak(1);
  EXPECT_LE(ratio, 0.3);
}

}  // namespace
}  // namespace pcdarts

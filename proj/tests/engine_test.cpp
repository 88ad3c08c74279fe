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
#include <numbers>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "pcdarts/engine/search.hpp"

namespace pcdarts {
namespace {

SearchConfig toy_config() {
  SearchConfig cfg;
  cfg.net.init_channels = 4;
  cfg.net.cells = 3;
  cfg.net.nodes = 3;
  cfg.net.stem_multiplier = 1;
  cfg.net.k = 2;
  cfg.epochs = 3;
  cfg.warm_up_epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 7;
  return cfg;
}

Dataset toy_data(std::size_t count, std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.count = count;
  spec.resolution = 8;
  spec.seed = seed;
  return make_synthetic(spec);
}

std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

TEST(SearchConfig, Validation) {
  auto cfg = toy_config();
  cfg.warm_up_epochs = cfg.epochs;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = toy_config();
  cfg.net.k = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_NO_THROW(toy_config().validate());
}

TEST(Search, RejectsDatasetSmallerThanTwoBatches) {
  auto cfg = toy_config();
  EXPECT_THROW(run_search<double>(cfg, toy_data(15)), DataError);
}

TEST(AlternatingStep, WeightStepLeavesArchBitwise) {
  auto cfg = toy_config();
  Searcher<double> s(cfg, 3, 2);
  auto data = toy_data(32);
  std::mt19937_64 rng(0);
  auto [x, y] = make_batch<double>(data, {0, 1, 2, 3, 4, 5, 6, 7}, {}, rng);
  std::vector<std::vector<double>> before;
  for (auto& p : s.net().arch_parameters()) before.push_back(values(p));
  std::vector<double> w0 = values(s.net().weights().front());
  s.weight_step(x, y, 0.1);
  auto arch = s.net().arch_parameters();
  for (std::size_t k = 0; k < arch.size(); ++k) EXPECT_EQ(values(arch[k]), before[k]);
  EXPECT_NE(values(s.net().weights().front()), w0);
}

TEST(AlternatingStep, ArchStepLeavesWeightsBitwise) {
  auto cfg = toy_config();
  Searcher<double> s(cfg, 3, 2);
  auto data = toy_data(32);
  std::mt19937_64 rng(0);
  auto [x, y] = make_batch<double>(data, {8, 9, 10, 11, 12, 13, 14, 15}, {}, rng);
  std::vector<std::vector<double>> before;
  for (auto& w : s.net().weights()) before.push_back(values(w));
  const auto a0 = values(s.net().arch().alpha_normal);
  s.arch_step(x, y);
  auto weights = s.net().weights();
  for (std::size_t k = 0; k < weights.size(); ++k) ASSERT_EQ(values(weights[k]), before[k]) << k;
  EXPECT_NE(values(s.net().arch().alpha_normal), a0);
  EXPECT_EQ(s.adam().steps(), 1u);
  EXPECT_EQ(s.sgd().steps(), 0u);
}

TEST(AlternatingStep, WarmUpGatesArchUpdate) {
  auto cfg = toy_config();
  cfg.warm_up_epochs = 2;
  Searcher<double> s(cfg, 3, 2);
  auto data = toy_data(32);
  std::mt19937_64 rng(0);
  auto [x, y] = make_batch<double>(data, {0, 1, 2, 3, 4, 5, 6, 7}, {}, rng);
  auto m = s.alternating_step(x, y, x, y, 1, 0.05);
  EXPECT_FALSE(m.arch_updated);
  EXPECT_EQ(s.adam().steps(), 0u);
  m = s.alternating_step(x, y, x, y, 2, 0.05);
  EXPECT_TRUE(m.arch_updated);
  EXPECT_EQ(s.adam().steps(), 1u);
  EXPECT_EQ(s.sgd().steps(), 2u);
}

TEST(AlternatingStep, FrozenArchLossDrops) {
  auto cfg = toy_config();
  cfg.net.init_channels = 8;
  cfg.net.nodes = 4;
  cfg.net.k = 4;
  cfg.warm_up_epochs = 1;
  Searcher<float> s(cfg, 3, 2);
  auto data = toy_data(64, 3);
  std::mt19937_64 rng(0);
  std::vector<std::size_t> idx(32);
  std::iota(idx.begin(), idx.end(), 0);
  auto [x, y] = make_batch<float>(data, idx, {}, rng);
  const auto a0 = std::vector<float>(s.net().arch().alpha_normal.data().begin(),
                                     s.net().arch().alpha_normal.data().end());
  double first = 0, last = 0;
  for (int step = 0; step < 50; ++step) {
    auto m = s.alternating_step(x, y, x, y, 0, 0.05);
    if (step == 0) first = m.w_loss;
    last = m.w_loss;
  }
  EXPECT_LT(last, 0.9 * first);
  EXPECT_EQ(std::vector<float>(s.net().arch().alpha_normal.data().begin(),
                               s.net().arch().alpha_normal.data().end()),
            a0);
}

TEST(ArchStep, RiggedEdgePrefersExactFitOp) {
  // y = x is fit exactly by skip_connect; zero contributes nothing.
  std::mt19937_64 rng(0);
  MixedEdge<double> edge(0, 2, 4, 1, 1, {OpKind::kSkipConnect, OpKind::kZero}, {}, rng);
  auto alpha = Tensor<double>::zeros({1, 2}, true);
  Adam<double> adam({alpha}, AdamOptions{0.5, 0.999, 1e-8, 1e-3});
  auto x = Tensor<double>::randn({2, 4, 3, 3}, rng, 1.0);
  auto loss_at = [&]() {
    auto w = softmax(alpha, 1);
    auto y = mixed_op_forward(edge, x, EdgeWeights<double>{w, 0}, prefix_mask(4, 1), Mode::kTrain);
    auto d = add(y, scale(x, -1.0));
    return mean_all(mul(d, d));
  };
  double prev = loss_at().item();
  Tape<double>::local().clear();
  for (int step = 0; step < 10; ++step) {
    alpha.zero_grad();
    auto l = loss_at();
    backward(l);
    adam.step(0.06);
    const double now = loss_at().item();
    Tape<double>::local().clear();
    EXPECT_LT(now, prev) << "step " << step;
    prev = now;
    auto p = softmax(alpha, 1);
    EXPECT_GT(p.data()[0], 0.5);
  }
}

TEST(Search, WarmUpFreezesArchAndCountsSteps) {
  auto cfg = toy_config();
  cfg.epochs = 4;
  cfg.warm_up_epochs = 2;
  auto data = toy_data(48);
  auto res = run_search<double>(cfg, data);
  ASSERT_FALSE(res.aborted) << res.abort_reason;
  ASSERT_EQ(res.log.records.size(), 4u);
  auto cfg_net = cfg.net;
  cfg_net.seed = cfg.seed;
  cfg_net.in_channels = 3;
  cfg_net.classes = 2;
  SuperNet<double> fresh(cfg_net);
  const auto init = fresh.arch().to_named();
  for (std::size_t e = 0; e < cfg.warm_up_epochs; ++e)
    for (const auto& [name, t] : init)
      EXPECT_EQ(res.log.records[e].arch.at(name).values, t.values) << name << " epoch " << e;
  EXPECT_NE(res.log.records[2].arch.at("alpha.normal").values, init.at("alpha.normal").values);
  const std::size_t bw = (48 / 2) / 8;
  EXPECT_EQ(res.sgd_steps, cfg.epochs * bw);
  EXPECT_EQ(res.adam_steps, (cfg.epochs - cfg.warm_up_epochs) * bw);
  EXPECT_NEAR(res.log.records.back().lr, 0.0, 1e-12);
  for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(res.log.records[e].epoch, e);
  EXPECT_TRUE(validate(res.genotype, cfg.net.nodes).empty());
}

TEST(Search, DeterministicForFixedSeed) {
  auto cfg = toy_config();
  auto data = toy_data(32);
  auto a = run_search<double>(cfg, data);
  auto b = run_search<double>(cfg, data);
  EXPECT_EQ(genotype_json_text(a.genotype), genotype_json_text(b.genotype));
  for (const auto& [name, t] : a.weights) EXPECT_EQ(t.values, b.weights.at(name).values) << name;
  EXPECT_EQ(a.log.csv().substr(0, 60), b.log.csv().substr(0, 60));
}

TEST(Search, CsvHeaderAndRows) {
  auto cfg = toy_config();
  auto res = run_search<double>(cfg, toy_data(32));
  const auto csv = res.log.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,w_loss,w_acc,a_loss,a_acc,lr,peak_act_elems,seconds");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + static_cast<long>(cfg.epochs));
  EXPECT_EQ(res.log.snapshots().size(), cfg.epochs);
}

TEST(Search, NonFiniteInputAbortsWithLastGoodState) {
  auto cfg = toy_config();
  auto data = toy_data(32);
  for (auto& v : data.images) v = std::numeric_limits<float>::quiet_NaN();
  auto res = run_search<double>(cfg, data);
  EXPECT_TRUE(res.aborted);
  EXPECT_NE(res.abort_reason.find("epoch 0"), std::string::npos) << res.abort_reason;
  EXPECT_TRUE(res.log.records.empty());
  auto net_cfg = cfg.net;
  net_cfg.seed = cfg.seed;
  net_cfg.classes = 2;
  SuperNet<double> fresh(net_cfg);
  for (const auto& [name, t] : fresh.named_tensors()) EXPECT_EQ(res.weights.at(name).values, t.values) << name;
}

// Plain first-order DARTS written out by hand: same batches, own SGD with
// momentum, own Adam, own clipping and cosine schedule; the supernet is only
// used for forward/backward.
TEST(Search, PlainDartsReferenceLoop) {
  auto cfg = toy_config();
  cfg.net.partial_connection = false;
  cfg.net.edge_normalization = false;
  cfg.epochs = 2;
  cfg.warm_up_epochs = 0;
  cfg.w_grad_clip = 0.5;
  auto data = toy_data(40);  // 20 per half
  cfg.batch_size = 6;        // 3 batches per epoch, 6 steps in total
  auto res = run_search<double>(cfg, data);
  ASSERT_FALSE(res.aborted);

  auto net_cfg = cfg.net;
  net_cfg.seed = cfg.seed;
  net_cfg.classes = 2;
  SuperNet<double> net(net_cfg);
  auto weights = net.weights();
  std::vector<Tensor<double>> arch{net.arch().alpha_normal, net.arch().alpha_reduce};
  std::vector<std::vector<double>> mom(weights.size()), m1(2), m2(2);
  for (std::size_t k = 0; k < weights.size(); ++k) mom[k].assign(weights[k].numel(), 0.0);
  for (std::size_t k = 0; k < 2; ++k) {
    m1[k].assign(arch[k].numel(), 0.0);
    m2[k].assign(arch[k].numel(), 0.0);
  }
  const auto plan = split_half(data.count(), split_seed(cfg.seed));
  const std::size_t per_epoch = plan.w.size() / cfg.batch_size, total = cfg.epochs * per_epoch;
  std::mt19937_64 unused(0);
  std::size_t t = 0, adam_t = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto wb = batches(plan, Half::kW, cfg.batch_size, epoch_stream_seed(cfg.seed, epoch, Half::kW));
    auto ab = batches(plan, Half::kA, cfg.batch_size, epoch_stream_seed(cfg.seed, epoch, Half::kA));
    for (std::size_t b = 0; b < wb.size(); ++b, ++t) {
      const double lr = 0.5 * cfg.w_lr * (1 + std::cos(std::numbers::pi * t / double(total - 1)));
      // weight step
      for (auto& w : weights) w.zero_grad();
      auto [wx, wy] = make_batch<double>(data, wb[b], {}, unused);
      backward(cross_entropy(net.forward(wx, Mode::kTrain), wy));
      double sq = 0;
      for (auto& w : weights)
        for (double g : w.grad()) sq += g * g;
      const double norm = std::sqrt(sq);
      const double f = norm > cfg.w_grad_clip ? cfg.w_grad_clip / (norm + 1e-6) : 1.0;
      for (std::size_t k = 0; k < weights.size(); ++k) {
        auto v = weights[k].mutable_data();
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double g = (f == 1.0 ? weights[k].grad()[i] : weights[k].grad()[i] * f) +
                           cfg.w_weight_decay * v[i];
          mom[k][i] = t == 0 ? g : cfg.w_momentum * mom[k][i] + g;
          v[i] -= lr * mom[k][i];
        }
      }
      // arch step
      for (auto& a : arch) a.zero_grad();
      auto [ax, ay] = make_batch<double>(data, ab[b], {}, unused);
      backward(cross_entropy(net.forward(ax, Mode::kTrain), ay));
      ++adam_t;
      for (std::size_t k = 0; k < 2; ++k) {
        auto v = arch[k].mutable_data();
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double g = arch[k].grad()[i] + cfg.a_weight_decay * v[i];
          m1[k][i] = cfg.a_beta1 * m1[k][i] + (1 - cfg.a_beta1) * g;
          m2[k][i] = cfg.a_beta2 * m2[k][i] + (1 - cfg.a_beta2) * g * g;
          const double mh = m1[k][i] / (1 - std::pow(cfg.a_beta1, adam_t));
          const double vh = m2[k][i] / (1 - std::pow(cfg.a_beta2, adam_t));
          v[i] -= cfg.a_lr * mh / (std::sqrt(vh) + 1e-8);
        }
      }
    }
  }
  EXPECT_EQ(t, 6u);
  auto close = [](const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0, n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      d = std::max(d, std::abs(a[i] - b[i]));
      n = std::max(n, std::abs(b[i]));
    }
    return d <= 1e-10 * std::max(n, 1.0);
  };
  EXPECT_TRUE(close(res.arch.to_named().at("alpha.normal").values, values(arch[0])));
  EXPECT_TRUE(close(res.arch.to_named().at("alpha.reduce").values, values(arch[1])));
  for (const auto& [name, tensor] : net.named())
    EXPECT_TRUE(close(res.weights.at(name).values, values(tensor))) << name;
  // with edge normalisation off, beta never moves
  EXPECT_EQ(res.arch.to_named().at("beta.normal").values,
            SuperNet<double>(net_cfg).arch().to_named().at("beta.normal").values);
}

TEST(SeedSweep, JaccardAndDeterminism) {
  auto cfg = toy_config();
  auto data = toy_data(32);
  auto g = run_search<double>(cfg, data).genotype;
  EXPECT_DOUBLE_EQ(genotype_jaccard(g, g), 1.0);
  auto rep = seed_sweep<double>(cfg, data, {3, 3}, 2);
  ASSERT_EQ(rep.runs.size(), 2u);
  EXPECT_EQ(rep.runs[0].genotype, rep.runs[1].genotype);
  EXPECT_DOUBLE_EQ(rep.jaccard_mean, 1.0);
  auto five = seed_sweep<double>(cfg, data, {0, 1, 2, 3, 4}, 2);
  EXPECT_EQ(five.runs.size(), 5u);
  EXPECT_GE(five.jaccard_min, 0.0);
  EXPECT_LE(five.jaccard_mean, 1.0);
  EXPECT_THROW(seed_sweep<double>(cfg, data, {1}), std::invalid_argument);
}

TEST(SeedSweep, JaccardOfDisjointEdgeSets) {
  Genotype a{{{"sep_conv_3x3", 0}, {"sep_conv_3x3", 1}}, {{"max_pool_3x3", 0}, {"skip_connect", 1}}, {2}};
  Genotype b = a;
  b.normal[0].op = "dil_conv_3x3";
  // 4 edges each, 3 shared -> 3 / 5
  EXPECT_DOUBLE_EQ(genotype_jaccard(a, b), 3.0 / 5.0);
}

}  // namespace
}  // namespace pcdarts

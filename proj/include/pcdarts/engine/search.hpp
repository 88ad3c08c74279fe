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
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "pcdarts/core/checkpoint.hpp"
#include "pcdarts/core/optim.hpp"
#include "pcdarts/data/dataset.hpp"
#include "pcdarts/genotype/genotype.hpp"
#include "pcdarts/search/supernet.hpp"

namespace pcdarts {

struct SearchConfig {
  SuperNetConfig net;  // K, N, L, C0, flags, mask mode; seed is overwritten
  std::size_t epochs = 50;
  std::size_t warm_up_epochs = 15;
  std::size_t batch_size = 256;
  double w_lr = 0.1;
  double w_momentum = 0.9;
  double w_weight_decay = 3e-4;
  double w_grad_clip = 5.0;  // <= 0 disables clipping
  double a_lr = 6e-4;
  double a_beta1 = 0.5;
  double a_beta2 = 0.999;
  double a_weight_decay = 1e-3;
  AugmentOptions augment;
  DeriveOptions derive;  // edge_normalization is taken from net
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0) throw std::invalid_argument("search config: epochs must be positive");
    if (warm_up_epochs >= epochs)
      throw std::invalid_argument("search config: warm_up_epochs (" + std::to_string(warm_up_epochs) +
                                  ") must be below epochs (" + std::to_string(epochs) + ")");
    if (net.k == 0) throw std::invalid_argument("search config: K must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("search config: batch_size must be positive");
    if (net.nodes < 3) throw std::invalid_argument("search config: nodes must be >= 3");
    if (net.cells == 0) throw std::invalid_argument("search config: cells must be >= 1");
  }

  DeriveOptions derive_options() const {
    DeriveOptions d = derive;
    d.edge_normalization = net.edge_normalization;
    return d;
  }
};

/// Seed of the shuffle stream for one half in one epoch.
inline std::uint64_t epoch_stream_seed(std::uint64_t seed, std::size_t epoch, Half half) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), half == Half::kW ? 0x57u : 0x41u};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline std::uint64_t split_seed(std::uint64_t seed) { return seed * 0x9e3779b97f4a7c15ULL + 0x5b1d; }

struct EpochRecord {
  std::size_t epoch = 0;
  double w_loss = 0, w_acc = 0;
  double a_loss = 0, a_acc = 0;
  double lr = 0;
  std::size_t peak_act_elems = 0;
  double seconds = 0;
  Genotype genotype;
  NamedTensors arch;  // alpha/beta at the end of the epoch
};

struct SearchLog {
  std::vector<EpochRecord> records;

  std::string csv() const {
    std::ostringstream os;
    os.precision(9);
    os << "epoch,w_loss,w_acc,a_loss,a_acc,lr,peak_act_elems,seconds\n";
    for (const auto& r : records)
      os << r.epoch << ',' << r.w_loss << ',' << r.w_acc << ',' << r.a_loss << ',' << r.a_acc
         << ',' << r.lr << ',' << r.peak_act_elems << ',' << r.seconds << '\n';
    return os.str();
  }

  nlohmann::ordered_json snapshots() const {
    auto a = nlohmann::ordered_json::array();
    for (const auto& r : records) {
      nlohmann::ordered_json e;
      e["epoch"] = r.epoch;
      e["genotype"] = genotype_to_json(r.genotype);
      a.push_back(e);
    }
    return a;
  }
};

struct StepMetrics {
  double w_loss = 0, w_acc = 0;
  double a_loss = 0, a_acc = 0;
  bool arch_updated = false;
};

template <class T>
double accuracy(const Tensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::size_t hit = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = logits.data().data() + b * K;
    const auto arg = static_cast<int>(std::max_element(row, row + K) - row);
    hit += arg == labels[b];
  }
  return static_cast<double>(hit) / static_cast<double>(B);
}

class SearchAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Owns a supernet and both optimisers; performs first-order alternating
/// updates (weights on a W batch, then architecture on an A batch).
template <class T>
class Searcher {
 public:
  explicit Searcher(SearchConfig cfg, std::size_t in_channels, std::size_t classes)
      : cfg_(prepare(std::move(cfg), in_channels, classes)),
        net_(cfg_.net),
        sgd_(net_.weights(), SgdOptions{cfg_.w_momentum, cfg_.w_weight_decay}),
        adam_(net_.arch_parameters(),
              AdamOptions{cfg_.a_beta1, cfg_.a_beta2, 1e-8, cfg_.a_weight_decay}) {}

  SuperNet<T>& net() { return net_; }
  const SearchConfig& config() const { return cfg_; }
  const Sgd<T>& sgd() const { return sgd_; }
  const Adam<T>& adam() const { return adam_; }

  /// SGD on the weights from one W batch. Touches only omega (and BN
  /// running statistics).
  std::pair<double, double> weight_step(const Tensor<T>& x, const std::vector<int>& y, double lr) {
    auto weights = net_.weights();
    zero_grads(weights);
    auto logits = net_.forward(x, Mode::kTrain);
    auto loss = cross_entropy(logits, y);
    const std::pair<double, double> out{static_cast<double>(loss.item()), accuracy(logits, y)};
    backward(loss);
    detail::require_grads(weights, "weight step");
    if (cfg_.w_grad_clip > 0) clip_grad_norm(weights, cfg_.w_grad_clip);
    sgd_.step(lr);
    auto arch = net_.arch_parameters();
    zero_grads(arch);
    return out;
  }

  /// Adam on (alpha, beta) from one A batch, first-order: gradients are taken
  /// at the current weights. Touches only the architecture parameters.
  std::pair<double, double> arch_step(const Tensor<T>& x, const std::vector<int>& y) {
    auto arch = net_.arch_parameters();
    zero_grads(arch);
    auto logits = net_.forward(x, Mode::kTrain);
    auto loss = cross_entropy(logits, y);
    const std::pair<double, double> out{static_cast<double>(loss.item()), accuracy(logits, y)};
    backward(loss);
    detail::require_grads(arch, "arch step");
    adam_.step(cfg_.a_lr);
    auto weights = net_.weights();
    zero_grads(weights);
    return out;
  }

  /// Loss and accuracy on a batch without recording or updating anything
  /// except BN running statistics.
  std::pair<double, double> evaluate(const Tensor<T>& x, const std::vector<int>& y) {
    NoGradGuard<T> ng;
    auto logits = net_.forward(x, Mode::kTrain);
    return {static_cast<double>(cross_entropy(logits, y).item()), accuracy(logits, y)};
  }

  /// One weight update, then one architecture update when `epoch` is past the
  /// warm-up. During warm-up the A batch is only evaluated.
  StepMetrics alternating_step(const Tensor<T>& wx, const std::vector<int>& wy,
                               const Tensor<T>& ax, const std::vector<int>& ay,
                               std::size_t epoch, double lr) {
    StepMetrics m;
    std::tie(m.w_loss, m.w_acc) = weight_step(wx, wy, lr);
    m.arch_updated = epoch >= cfg_.warm_up_epochs;
    std::tie(m.a_loss, m.a_acc) = m.arch_updated ? arch_step(ax, ay) : evaluate(ax, ay);
    return m;
  }

 private:
  static SearchConfig prepare(SearchConfig cfg, std::size_t in_channels, std::size_t classes) {
    cfg.validate();
    cfg.net.in_channels = in_channels;
    cfg.net.classes = classes;
    cfg.net.seed = cfg.seed;
    return cfg;
  }

  SearchConfig cfg_;
  SuperNet<T> net_;
  Sgd<T> sgd_;
  Adam<T> adam_;
};

template <class T>
struct SearchResult {
  ArchParams<T> arch;
  SearchLog log;
  NamedTensors weights;
  Genotype genotype;
  std::uint64_t sgd_steps = 0, adam_steps = 0;
  bool aborted = false;
  std::string abort_reason;
};

template <class T>
void copy_values(const Tensor<T>& src, Tensor<T>& dst) {
  auto d = dst.mutable_data();
  std::copy(src.data().begin(), src.data().end(), d.begin());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full search: equal W/A halves, cosine-annealed SGD on the weights every
/// step, Adam on (alpha, beta) once the warm-up is over. A non-finite loss
/// stops the run and returns the state at the end of the last good epoch.
template <class T>
SearchResult<T> run_search(const SearchConfig& cfg_in, const Dataset& data,
                           const EpochCallback& on_epoch = {}) {
  cfg_in.validate();
  if (data.count() < 2 * cfg_in.batch_size) {
    throw DataError("search: dataset of " + std::to_string(data.count()) +
                    " examples is smaller than two batches of " + std::to_string(cfg_in.batch_size));
  }
  Searcher<T> s(cfg_in, data.channels, data.classes);
  const SearchConfig& cfg = s.config();
  const SplitPlan plan = split_half(data.count(), split_seed(cfg.seed));
  const std::size_t per_epoch = plan.w.size() / cfg.batch_size;
  const std::size_t total = cfg.epochs * per_epoch;
  std::mt19937_64 aug_rng(cfg.seed ^ 0xa06ULL);

  SearchResult<T> res;
  NamedTensors good_weights = s.net().named_tensors();
  ArchParams<T> good_arch = s.net().arch().clone();
  auto& ctr = ActivationCounter::local();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto wb = batches(plan, Half::kW, cfg.batch_size, epoch_stream_seed(cfg.seed, epoch, Half::kW));
    auto ab = batches(plan, Half::kA, cfg.batch_size, epoch_stream_seed(cfg.seed, epoch, Half::kA));
    ctr.reset_peak();
    const std::size_t base = ctr.live();
    EpochRecord rec;
    rec.epoch = epoch;
    bool failed = false;
    std::string why;
    for (std::size_t b = 0; b < wb.size(); ++b, ++step) {
      const double lr = cosine_lr(step, std::max<std::size_t>(total - 1, 1), cfg.w_lr);
      auto [wx, wy] = make_batch<T>(data, wb[b], cfg.augment, aug_rng);
      auto [ax, ay] = make_batch<T>(data, ab[b % ab.size()], cfg.augment, aug_rng);
      StepMetrics m;
      try {
        m = s.alternating_step(wx, wy, ax, ay, epoch, lr);
      } catch (const NumericalError& e) {
        failed = true;
        why = e.what();
      }
      if (!failed && (!std::isfinite(m.w_loss) || !std::isfinite(m.a_loss))) {
        failed = true;
        why = "non-finite loss";
      }
      if (failed) {
        Tape<T>::local().clear();
        break;
      }
      rec.w_loss += m.w_loss;
      rec.w_acc += m.w_acc;
      rec.a_loss += m.a_loss;
      rec.a_acc += m.a_acc;
      rec.lr = lr;
    }
    if (failed) {
      s.net().load_named(good_weights);
      for (auto t : {CellType::kNormal, CellType::kReduce}) {
        copy_values(good_arch.alpha(t), s.net().arch().alpha(t));
        copy_values(good_arch.beta(t), s.net().arch().beta(t));
      }
      res.aborted = true;
      res.abort_reason = "epoch " + std::to_string(epoch) + ": " + why;
      break;
    }
    const double n = static_cast<double>(wb.size());
    rec.w_loss /= n;
    rec.w_acc /= n;
    rec.a_loss /= n;
    rec.a_acc /= n;
    rec.peak_act_elems = ctr.peak() - base;
    rec.genotype = derive(s.net().arch(), cfg.net.nodes, cfg.net.ops, cfg.derive_options());
    rec.arch = s.net().arch().to_named();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
    good_weights = s.net().named_tensors();
    good_arch = s.net().arch().clone();
  }
  res.arch = s.net().arch().clone();
  res.weights = s.net().named_tensors();
  res.genotype = derive(res.arch, cfg.net.nodes, cfg.net.ops, cfg.derive_options());
  res.sgd_steps = s.sgd().steps();
  res.adam_steps = s.adam().steps();
  return res;
}

/// Edge-set Jaccard similarity of two genotypes; an edge is
/// (cell type, node, predecessor, op).
inline double genotype_jaccard(const Genotype& a, const Genotype& b) {
  auto edges = [](const Genotype& g) {
    std::set<std::tuple<int, std::size_t, std::size_t, std::string>> s;
    for (int t = 0; t < 2; ++t) {
      const auto& c = t == 0 ? g.normal : g.reduce;
      for (std::size_t e = 0; e < c.size(); ++e) s.insert({t, 2 + e / 2, c[e].from, c[e].op});
    }
    return s;
  };
  const auto ea = edges(a), eb = edges(b);
  std::size_t inter = 0;
  for (const auto& e : ea) inter += eb.count(e);
  const std::size_t uni = ea.size() + eb.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct SeedRun {
  std::uint64_t seed = 0;
  Genotype genotype;
  double w_acc = 0, a_acc = 0;
  std::size_t peak_act_elems = 0;
  double seconds = 0;
  bool aborted = false;
};

struct SweepReport {
  std::vector<SeedRun> runs;
  double jaccard_mean = 0, jaccard_min = 0;
  double a_acc_mean = 0, a_acc_std = 0;
};

inline SweepReport summarize_runs(std::vector<SeedRun> runs) {
  SweepReport r;
  r.runs = std::move(runs);
  double sum = 0, lo = 1;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < r.runs.size(); ++i)
    for (std::size_t j = i + 1; j < r.runs.size(); ++j) {
      const double jac = genotype_jaccard(r.runs[i].genotype, r.runs[j].genotype);
      sum += jac;
      lo = std::min(lo, jac);
      ++pairs;
    }
  r.jaccard_mean = pairs ? sum / static_cast<double>(pairs) : 1.0;
  r.jaccard_min = pairs ? lo : 1.0;
  double m = 0;
  for (const auto& x : r.runs) m += x.a_acc;
  m /= static_cast<double>(std::max<std::size_t>(r.runs.size(), 1));
  double v = 0;
  for (const auto& x : r.runs) v += (x.a_acc - m) * (x.a_acc - m);
  r.a_acc_mean = m;
  r.a_acc_std = r.runs.size() > 1 ? std::sqrt(v / static_cast<double>(r.runs.size() - 1)) : 0.0;
  return r;
}

template <class T>
SeedRun run_one_seed(SearchConfig cfg, const Dataset& data, std::uint64_t seed) {
  cfg.seed = seed;
  auto res = run_search<T>(cfg, data);
  SeedRun run;
  run.seed = seed;
  run.genotype = res.genotype;
  run.aborted = res.aborted;
  for (const auto& r : res.log.records) {
    run.seconds += r.seconds;
    run.peak_act_elems = std::max(run.peak_act_elems, r.peak_act_elems);
  }
  if (!res.log.records.empty()) {
    run.w_acc = res.log.records.back().w_acc;
    run.a_acc = res.log.records.back().a_acc;
  }
  return run;
}

/// Independent searches that differ only in seed, up to `jobs` at a time,
/// each on its own thread with a private supernet, tape and counters.
template <class T>
SweepReport seed_sweep(const SearchConfig& cfg, const Dataset& data,
                       const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1) {
  if (seeds.size() < 2) throw std::invalid_argument("seed_sweep: need at least 2 seeds");
  std::vector<SeedRun> runs(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  jobs = std::max<std::size_t>(jobs, 1);
  for (std::size_t start = 0; start < seeds.size(); start += jobs) {
    std::vector<std::thread> pool;
    for (std::size_t i = start; i < std::min(seeds.size(), start + jobs); ++i)
      pool.emplace_back([&, i] {
        try {
          runs[i] = run_one_seed<T>(cfg, data, seeds[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return summarize_runs(std::move(runs));
}

}  // namespace pcdarts

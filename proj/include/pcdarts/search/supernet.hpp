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

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pcdarts/core/checkpoint.hpp"
#include "pcdarts/nas/operations.hpp"
#include "pcdarts/search/arch_params.hpp"
#include "pcdarts/search/partial_channel.hpp"

namespace pcdarts {

struct SuperNetConfig {
  std::size_t in_channels = 3;
  std::size_t init_channels = 16;  // C0
  std::size_t cells = 8;           // L
  std::size_t nodes = 6;           // N, including the two input nodes
  std::size_t classes = 10;
  std::size_t stem_multiplier = 3;
  std::size_t k = 4;
  bool partial_connection = true;
  bool edge_normalization = true;
  MaskMode mask_mode = MaskMode::kEfficient;
  OperationSet ops = default_operation_set();
  LayerOptions layer{};
  std::uint64_t seed = 0;

  /// Sampling divisor actually applied (1 when partial connection is off).
  std::size_t effective_k() const { return partial_connection ? k : 1; }
};

/// One searchable cell: two preprocessed inputs, mixed edges into every
/// intermediate node, output = concat of intermediate nodes.
template <class T>
class Cell {
 public:
  Cell(const SuperNetConfig& cfg, std::size_t c_prev_prev, std::size_t c_prev,
       std::size_t c, bool reduction, bool reduction_prev, std::mt19937_64& rng)
      : nodes_(cfg.nodes), channels_(c), reduction_(reduction),
        k_(cfg.effective_k()), pc_(cfg.partial_connection),
        en_(cfg.edge_normalization), mask_mode_(cfg.mask_mode) {
    if (cfg.nodes < 3) throw std::invalid_argument("cell: need at least 3 nodes");
    if (reduction_prev)
      pre0_ = std::make_unique<FactorizedReduce<T>>(c_prev_prev, c, cfg.layer, rng);
    else
      pre0_ = make_relu_conv_bn<T>(c_prev_prev, c, 1, 1, 0, cfg.layer, rng);
    pre1_ = make_relu_conv_bn<T>(c_prev, c, 1, 1, 0, cfg.layer, rng);
    for (std::size_t j = 2; j < nodes_; ++j)
      for (std::size_t i = 0; i < j; ++i) {
        const std::size_t stride = reduction && i < 2 ? 2 : 1;
        edges_.emplace_back(i, j, c, k_, stride, cfg.ops, cfg.layer, rng);
      }
  }

  CellType type() const { return reduction_ ? CellType::kReduce : CellType::kNormal; }
  std::size_t output_channels() const { return (nodes_ - 2) * channels_; }
  std::vector<MixedEdge<T>>& edges() { return edges_; }

  /// `op_weights` is softmax(alpha) for this cell type, shape (edges, ops).
  template <class Rng>
  Tensor<T> forward(const Tensor<T>& s0, const Tensor<T>& s1,
                    const Tensor<T>& op_weights, const Tensor<T>& beta,
                    Mode mode, Rng& mask_rng) {
    std::vector<Tensor<T>> states;
    states.reserve(nodes_);
    states.push_back(pre0_->forward(s0, mode));
    states.push_back(pre1_->forward(s1, mode));
    const std::size_t nops = edges_.front().ops.size();
    for (std::size_t j = 2; j < nodes_; ++j) {
      std::vector<Tensor<T>> incoming;
      incoming.reserve(j);
      for (std::size_t i = 0; i < j; ++i) {
        const std::size_t e = edge_index(i, j);
        auto& edge = edges_[e];
        const ChannelMask mask = mask_mode_ == MaskMode::kRandom && k_ > 1
                                     ? random_mask(channels_, k_, mask_rng)
                                     : prefix_mask(channels_, k_);
        incoming.push_back(mixed_op_forward(edge, states[i],
                                            EdgeWeights<T>{op_weights, e * nops},
                                            mask, mode));
      }
      Tensor<T> xj = node_forward(j, incoming, en_ ? &beta : nullptr, edge_offset(j));
      if (pc_ && k_ > 1 && mask_mode_ == MaskMode::kEfficient) {
        const std::size_t groups = shuffle_groups(channels_, k_);
        if (groups > 1) xj = channel_shuffle(xj, groups);
      }
      states.push_back(std::move(xj));
    }
    std::vector<Tensor<T>> inner(states.begin() + 2, states.end());
    return inner.size() == 1 ? inner.front() : concat_channels(inner);
  }

  void visit(const std::string& prefix, const TensorVisitor<T>& fn) {
    pre0_->visit(join_name(prefix, "pre0"), fn);
    pre1_->visit(join_name(prefix, "pre1"), fn);
    for (auto& e : edges_)
      e.visit(join_name(prefix, "edge" + std::to_string(e.from) + "_" +
                                    std::to_string(e.to)),
              fn);
  }

 private:
  std::size_t nodes_, channels_;
  bool reduction_;
  std::size_t k_;
  bool pc_, en_;
  MaskMode mask_mode_;
  std::unique_ptr<Layer<T>> pre0_, pre1_;
  std::vector<MixedEdge<T>> edges_;
};

/// The over-parameterised search network: stem, L cells sharing one set of
/// architecture parameters per cell type, classifier.
template <class T>
class SuperNet {
 public:
  explicit SuperNet(SuperNetConfig cfg) : cfg_(std::move(cfg)), mask_rng_(cfg_.seed ^ 0x5eedULL) {
    if (cfg_.ops.empty()) throw std::invalid_argument("supernet: empty operation set");
    if (cfg_.cells == 0) throw std::invalid_argument("supernet: need at least one cell");
    std::mt19937_64 rng(cfg_.seed);
    arch_ = init_arch_params<T>(cfg_.nodes, cfg_.ops.size(), cfg_.seed + 1);
    const std::size_t stem_c = cfg_.stem_multiplier * cfg_.init_channels;
    LayerOptions stem_opts = cfg_.layer;
    stem_opts.bn_affine = true;
    stem_ = build_stem<T>(cfg_.in_channels, stem_c, stem_opts, rng);
    std::size_t c_pp = stem_c, c_p = stem_c, c = cfg_.init_channels;
    bool reduction_prev = false;
    for (std::size_t l = 0; l < cfg_.cells; ++l) {
      const bool reduction = is_reduction_cell(l, cfg_.cells);
      if (reduction) c *= 2;
      cells_.push_back(std::make_unique<Cell<T>>(cfg_, c_pp, c_p, c, reduction,
                                                 reduction_prev, rng));
      reduction_prev = reduction;
      c_pp = c_p;
      c_p = cells_.back()->output_channels();
    }
    classifier_ = std::make_unique<Classifier<T>>(c_p, cfg_.classes, rng);
    collect();
  }

  SuperNet(const SuperNet&) = delete;
  SuperNet& operator=(const SuperNet&) = delete;

  Tensor<T> forward(const Tensor<T>& batch, Mode mode) {
    detail::require_rank(batch, 4, "supernet");
    if (batch.dim(1) != cfg_.in_channels)
      throw ShapeError("supernet: expected " + std::to_string(cfg_.in_channels) +
                       " input channels, got " + shape_str(batch.shape()));
    const auto w_normal = softmax(arch_.alpha_normal, 1);
    const auto w_reduce = softmax(arch_.alpha_reduce, 1);
    Tensor<T> s0 = stem_->forward(batch, mode);
    Tensor<T> s1 = s0;
    for (auto& cell : cells_) {
      const bool red = cell->type() == CellType::kReduce;
      Tensor<T> out = cell->forward(s0, s1, red ? w_reduce : w_normal,
                                    arch_.beta(cell->type()), mode, mask_rng_);
      s0 = s1;
      s1 = out;
    }
    return classifier_->forward(s1);
  }

  const SuperNetConfig& config() const { return cfg_; }
  ArchParams<T>& arch() { return arch_; }
  const ArchParams<T>& arch() const { return arch_; }

  /// Replaces the architecture parameters (e.g. from a checkpoint).
  void set_arch(ArchParams<T> a) {
    if (a.nodes != cfg_.nodes || a.num_ops != cfg_.ops.size())
      throw std::invalid_argument("supernet: arch params arity mismatch");
    arch_ = std::move(a);
  }

  /// Trainable network weights (omega), excluding alpha and beta.
  const std::vector<Tensor<T>>& weights() const { return weights_; }

  /// Architecture parameters that receive gradients: both alphas, plus both
  /// betas when edge normalisation is on.
  std::vector<Tensor<T>> arch_parameters() const {
    std::vector<Tensor<T>> p = arch_.alphas();
    if (cfg_.edge_normalization) {
      auto b = arch_.betas();
      p.insert(p.end(), b.begin(), b.end());
    }
    return p;
  }

  /// Every named tensor of the network (weights and buffers).
  NamedTensors named_tensors() const {
    NamedTensors out;
    for (const auto& [name, t] : named_) out.emplace(name, store(t));
    return out;
  }

  /// Loads weights and buffers by name; names must match exactly.
  void load_named(const NamedTensors& named) {
    for (auto& [name, t] : named_) {
      auto it = named.find(name);
      if (it == named.end()) throw CheckpointError("checkpoint lacks '" + name + "'");
      if (it->second.shape != t.shape())
        throw CheckpointError("tensor '" + name + "' has shape " +
                              shape_str(it->second.shape) + ", expected " +
                              shape_str(t.shape()));
      auto dst = t.mutable_data();
      for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = static_cast<T>(it->second.values[i]);
    }
  }

  /// Name -> tensor handle, for tests and reference implementations.
  const std::vector<std::pair<std::string, Tensor<T>>>& named() const { return named_; }
  Tensor<T> tensor(const std::string& name) const {
    for (const auto& [n, t] : named_)
      if (n == name) return t;
    throw std::out_of_range("supernet: no tensor named '" + name + "'");
  }

  std::vector<std::unique_ptr<Cell<T>>>& cells() { return cells_; }

 private:
  void collect() {
    auto fn = [this](const std::string& name, Tensor<T>& t, bool trainable) {
      t.set_name(name);
      named_.emplace_back(name, t);
      if (trainable) weights_.push_back(t);
    };
    stem_->visit("stem", fn);
    for (std::size_t l = 0; l < cells_.size(); ++l)
      cells_[l]->visit("cells." + std::to_string(l), fn);
    classifier_->visit("classifier", fn);
  }

  SuperNetConfig cfg_;
  std::mt19937_64 mask_rng_;
  ArchParams<T> arch_;
  std::unique_ptr<Layer<T>> stem_;
  std::vector<std::unique_ptr<Cell<T>>> cells_;
  std::unique_ptr<Classifier<T>> classifier_;
  std::vector<Tensor<T>> weights_;
  std::vector<std::pair<std::string, Tensor<T>>> named_;
};

}  // namespace pcdarts

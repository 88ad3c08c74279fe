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
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pcdarts/core/primitives.hpp"
#include "pcdarts/nas/operations.hpp"

namespace pcdarts {

enum class MaskMode { kEfficient, kRandom };

/// Channels of an edge input routed through the operation mixture
/// (`selected`) versus bypassed (`masked`). Together they partition
/// [0, channels).
struct ChannelMask {
  std::size_t channels = 0;
  std::size_t k = 1;
  std::vector<std::size_t> selected;
  std::vector<std::size_t> masked;

  std::size_t selected_count() const noexcept { return selected.size(); }

  /// True when selected = [0, n) and masked = [n, C).
  bool is_prefix() const {
    for (std::size_t i = 0; i < selected.size(); ++i)
      if (selected[i] != i) return false;
    for (std::size_t i = 0; i < masked.size(); ++i)
      if (masked[i] != selected.size() + i) return false;
    return true;
  }
};

inline std::size_t selected_channels(std::size_t channels, std::size_t k) {
  if (k == 0) throw std::invalid_argument("channel mask: K must be >= 1");
  if (channels < k)
    throw std::invalid_argument("channel mask: " + std::to_string(channels) +
                                " channels cannot be sampled with K=" +
                                std::to_string(k));
  return (channels + k - 1) / k;
}

/// The efficient variant: the first ceil(C/K) channels are selected.
inline ChannelMask prefix_mask(std::size_t channels, std::size_t k) {
  const std::size_t n = selected_channels(channels, k);
  ChannelMask m{channels, k, {}, {}};
  m.selected.resize(n);
  std::iota(m.selected.begin(), m.selected.end(), std::size_t{0});
  m.masked.resize(channels - n);
  std::iota(m.masked.begin(), m.masked.end(), n);
  return m;
}

/// A uniformly sampled subset of ceil(C/K) channels, each list sorted.
template <class Rng>
ChannelMask random_mask(std::size_t channels, std::size_t k, Rng& rng) {
  const std::size_t n = selected_channels(channels, k);
  std::vector<std::size_t> idx(channels);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  ChannelMask m{channels, k, {idx.begin(), idx.begin() + n},
                {idx.begin() + n, idx.end()}};
  std::sort(m.selected.begin(), m.selected.end());
  std::sort(m.masked.begin(), m.masked.end());
  return m;
}

/// Group count used for post-node shuffling: K when it divides C, otherwise
/// the greatest divisor of C not exceeding K.
inline std::size_t shuffle_groups(std::size_t channels, std::size_t k) {
  for (std::size_t g = std::min(k, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

/// Permutation taking channel c = g*(C/groups) + r to position r*groups + g,
/// expressed as out[pos] = in[perm[pos]].
inline std::vector<std::size_t> shuffle_permutation(std::size_t channels,
                                                    std::size_t groups) {
  if (groups == 0 || channels % groups != 0)
    throw std::invalid_argument("channel_shuffle: " + std::to_string(channels) +
                                " channels not divisible into " +
                                std::to_string(groups) + " groups");
  const std::size_t per = channels / groups;
  std::vector<std::size_t> perm(channels);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t r = 0; r < per; ++r) perm[r * groups + g] = g * per + r;
  return perm;
}

template <class T>
Tensor<T> channel_shuffle(const Tensor<T>& x, std::size_t groups) {
  detail::require_rank(x, 4, "channel_shuffle");
  return permute_channels(x, shuffle_permutation(x.dim(1), groups));
}

/// All candidate operations on one edge, built for the selected channel
/// count and the edge stride.
template <class T>
struct MixedEdge {
  std::size_t from = 0, to = 0;
  std::size_t channels = 0;     // channels of the edge input
  std::size_t op_channels = 0;  // channels seen by each candidate op
  std::size_t stride = 1;
  OperationSet ops;
  std::vector<std::unique_ptr<Layer<T>>> layers;

  MixedEdge(std::size_t i, std::size_t j, std::size_t c, std::size_t k,
            std::size_t s, OperationSet op_set, const LayerOptions& opts,
            std::mt19937_64& rng)
      : from(i), to(j), channels(c), op_channels(selected_channels(c, k)),
        stride(s), ops(std::move(op_set)) {
    for (auto kind : ops) layers.push_back(build_op<T>(kind, op_channels, stride, opts, rng));
  }

  std::string label() const {
    return "(" + std::to_string(from) + "," + std::to_string(to) + ")";
  }

  void visit(const std::string& prefix, const TensorVisitor<T>& fn) {
    for (std::size_t o = 0; o < ops.size(); ++o)
      layers[o]->visit(join_name(prefix, std::string(op_name(ops[o]))), fn);
  }
};

/// Mixture weights for one edge: entries [offset, offset + |ops|) of a
/// softmax-normalised tensor.
template <class T>
struct EdgeWeights {
  Tensor<T> weights;
  std::size_t offset = 0;
};

/// Partial-channel mixed operation:
///   concat( sum_o w_o * o(x[selected]), bypass(x[masked]) )
/// with the bypass the identity at stride 1 and a 2x2 stride-2 max-pool at
/// stride 2. With every channel selected this is the plain mixture.
/// Activation elements produced by the candidate ops and their weighted sum
/// are tallied by the activation counter.
template <class T>
Tensor<T> mixed_op_forward(MixedEdge<T>& edge, const Tensor<T>& x,
                           const EdgeWeights<T>& w, const ChannelMask& mask,
                           Mode mode) {
  detail::require_rank(x, 4, "mixed_op");
  const std::size_t C = x.dim(1);
  if (C != edge.channels || mask.channels != C ||
      mask.selected_count() != edge.op_channels) {
    throw ShapeError("mixed_op " + edge.label() + ": input " + shape_str(x.shape()) +
                     " / mask of " + std::to_string(mask.channels) + " channels (" +
                     std::to_string(mask.selected_count()) +
                     " selected) incompatible with edge built for " +
                     std::to_string(edge.channels) + " channels (" +
                     std::to_string(edge.op_channels) + " selected)");
  }
  const bool prefix = mask.is_prefix();
  std::vector<std::size_t> order;
  Tensor<T> xin = x;
  if (!prefix) {
    order = mask.selected;
    order.insert(order.end(), mask.masked.begin(), mask.masked.end());
    xin = permute_channels(x, order);
  }
  const std::size_t n = mask.selected_count();
  Tensor<T> xs = n == C ? xin : slice_channels(xin, 0, n);

  Tensor<T> mix;
  {
    ActivationScope scope;
    std::vector<Tensor<T>> terms;
    terms.reserve(edge.ops.size());
    for (std::size_t o = 0; o < edge.ops.size(); ++o) {
      auto y = edge.layers[o]->forward(xs, mode);
      terms.push_back(scale_by(y, w.weights, w.offset + o));
    }
    mix = terms.size() == 1 ? terms.front() : add_n(terms);
  }
  if (n == C) return mix;

  Tensor<T> bypass = slice_channels(xin, n, C);
  if (edge.stride == 2) bypass = max_pool2d(bypass, Pool2dAttrs{2, 2, 0});
  if (bypass.dim(2) != mix.dim(2) || bypass.dim(3) != mix.dim(3)) {
    throw ShapeError("mixed_op " + edge.label() + ": bypass extents " +
                     shape_str(bypass.shape()) + " differ from mixture " +
                     shape_str(mix.shape()));
  }
  Tensor<T> out = concat_channels<T>({mix, bypass});
  if (prefix) return out;
  std::vector<std::size_t> inverse(C);
  for (std::size_t pos = 0; pos < C; ++pos) inverse[order[pos]] = pos;
  return permute_channels(out, inverse);
}

/// x_j = sum_i c_i * f_ij with c = softmax over the incoming betas when
/// `beta` is given, else c_i = 1.
template <class T>
Tensor<T> node_forward(std::size_t j, const std::vector<Tensor<T>>& edge_outputs,
                       const Tensor<T>* beta, std::size_t beta_offset) {
  if (edge_outputs.empty())
    throw ShapeError("node " + std::to_string(j) + ": no incoming edges");
  for (std::size_t i = 1; i < edge_outputs.size(); ++i) {
    if (edge_outputs[i].shape() != edge_outputs[0].shape())
      throw ShapeError("node " + std::to_string(j) + ": edge (" + std::to_string(i) +
                       "," + std::to_string(j) + ") output " +
                       shape_str(edge_outputs[i].shape()) + " differs from edge (0," +
                       std::to_string(j) + ") output " +
                       shape_str(edge_outputs[0].shape()));
  }
  if (!beta) return edge_outputs.size() == 1 ? edge_outputs[0] : add_n(edge_outputs);
  auto coef = softmax(slice_flat(*beta, beta_offset, edge_outputs.size()), 0);
  std::vector<Tensor<T>> terms;
  terms.reserve(edge_outputs.size());
  for (std::size_t i = 0; i < edge_outputs.size(); ++i)
    terms.push_back(scale_by(edge_outputs[i], coef, i));
  return terms.size() == 1 ? terms.front() : add_n(terms);
}

}  // namespace pcdarts

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
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcdarts/core/checkpoint.hpp"
#include "pcdarts/core/tensor.hpp"

namespace pcdarts {

enum class CellType { kNormal, kReduce };

/// Number of candidate edges in a cell with `nodes` nodes (two inputs):
/// edges (i, j) with 0 <= i < j and 2 <= j < nodes.
inline std::size_t num_edges(std::size_t nodes) {
  return nodes < 3 ? 0 : (nodes - 1) * nodes / 2 - 1;
}

/// Index of the first edge entering node j; edges are ordered by j, then i.
inline std::size_t edge_offset(std::size_t j) {
  return j < 2 ? 0 : (j - 1) * j / 2 - 1;
}

/// Depths of the two reduction cells.
inline bool is_reduction_cell(std::size_t index, std::size_t cells) {
  return index == cells / 3 || index == 2 * cells / 3;
}

inline std::size_t edge_index(std::size_t i, std::size_t j) {
  return edge_offset(j) + i;
}

/// Architecture parameters shared by all cells of one type: alpha holds one
/// row of operation logits per edge, beta one logit per edge.
template <class T>
struct ArchParams {
  std::size_t nodes = 0;
  std::size_t num_ops = 0;
  Tensor<T> alpha_normal, alpha_reduce;
  Tensor<T> beta_normal, beta_reduce;

  const Tensor<T>& alpha(CellType t) const {
    return t == CellType::kNormal ? alpha_normal : alpha_reduce;
  }
  const Tensor<T>& beta(CellType t) const {
    return t == CellType::kNormal ? beta_normal : beta_reduce;
  }
  Tensor<T>& alpha(CellType t) {
    return t == CellType::kNormal ? alpha_normal : alpha_reduce;
  }
  Tensor<T>& beta(CellType t) {
    return t == CellType::kNormal ? beta_normal : beta_reduce;
  }

  std::vector<Tensor<T>> alphas() const { return {alpha_normal, alpha_reduce}; }
  std::vector<Tensor<T>> betas() const { return {beta_normal, beta_reduce}; }

  NamedTensors to_named() const {
    return {{"alpha.normal", store(alpha_normal)},
            {"alpha.reduce", store(alpha_reduce)},
            {"beta.normal", store(beta_normal)},
            {"beta.reduce", store(beta_reduce)}};
  }

  /// Deep copy detached from any tape.
  ArchParams clone() const {
    ArchParams c{nodes, num_ops, alpha_normal.clone(), alpha_reduce.clone(),
                 beta_normal.clone(), beta_reduce.clone()};
    for (auto* t : {&c.alpha_normal, &c.alpha_reduce, &c.beta_normal, &c.beta_reduce})
      t->set_requires_grad(true);
    c.name_tensors();
    return c;
  }

  void name_tensors() {
    alpha_normal.set_name("alpha.normal");
    alpha_reduce.set_name("alpha.reduce");
    beta_normal.set_name("beta.normal");
    beta_reduce.set_name("beta.reduce");
  }
};

/// alpha, beta ~ N(0, 1e-3), deterministic in `seed`.
template <class T>
ArchParams<T> init_arch_params(std::size_t nodes, std::size_t num_ops,
                               std::uint64_t seed, double stddev = 1e-3) {
  if (nodes < 3) throw std::invalid_argument("init_arch_params: need at least 3 nodes");
  if (num_ops == 0) throw std::invalid_argument("init_arch_params: empty operation set");
  std::mt19937_64 rng(seed);
  const std::size_t e = num_edges(nodes);
  const T sd = static_cast<T>(stddev);
  ArchParams<T> a;
  a.nodes = nodes;
  a.num_ops = num_ops;
  a.alpha_normal = Tensor<T>::randn({e, num_ops}, rng, sd, true);
  a.alpha_reduce = Tensor<T>::randn({e, num_ops}, rng, sd, true);
  a.beta_normal = Tensor<T>::randn({e}, rng, sd, true);
  a.beta_reduce = Tensor<T>::randn({e}, rng, sd, true);
  a.name_tensors();
  return a;
}

/// Rebuilds arch params from a checkpoint, checking arity against `nodes`.
template <class T>
ArchParams<T> arch_params_from_named(const NamedTensors& named, std::size_t nodes) {
  auto fetch = [&](const std::string& name) -> const StoredTensor& {
    auto it = named.find(name);
    if (it == named.end())
      throw CheckpointError("arch checkpoint lacks tensor '" + name + "'");
    return it->second;
  };
  const auto& an = fetch("alpha.normal");
  if (an.shape.size() != 2)
    throw CheckpointError("alpha.normal must be rank 2, got " + shape_str(an.shape));
  const std::size_t e = num_edges(nodes);
  const std::size_t ops = an.shape[1];
  for (const char* name : {"alpha.normal", "alpha.reduce"}) {
    const auto& t = fetch(name);
    if (t.shape != Shape{e, ops})
      throw CheckpointError(std::string(name) + " has shape " + shape_str(t.shape) +
                            " but a " + std::to_string(nodes) + "-node cell needs " +
                            shape_str(Shape{e, ops}));
  }
  for (const char* name : {"beta.normal", "beta.reduce"}) {
    const auto& t = fetch(name);
    if (t.shape != Shape{e})
      throw CheckpointError(std::string(name) + " has shape " + shape_str(t.shape) +
                            " but a " + std::to_string(nodes) + "-node cell needs " +
                            shape_str(Shape{e}));
  }
  ArchParams<T> a;
  a.nodes = nodes;
  a.num_ops = ops;
  a.alpha_normal = fetch("alpha.normal").template as<T>();
  a.alpha_reduce = fetch("alpha.reduce").template as<T>();
  a.beta_normal = fetch("beta.normal").template as<T>();
  a.beta_reduce = fetch("beta.reduce").template as<T>();
  for (auto* t : {&a.alpha_normal, &a.alpha_reduce, &a.beta_normal, &a.beta_reduce})
    t->set_requires_grad(true);
  a.name_tensors();
  return a;
}

}  // namespace pcdarts

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
#include <cmath>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "pcdarts/genotype/genotype.hpp"

namespace pcdarts::testing {

inline std::vector<double> softmax_ref(const std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end()), s = 0;
  std::vector<double> p;
  for (double x : v) p.push_back(std::exp(x - m));
  for (double x : p) s += x;
  for (double& x : p) x /= s;
  return p;
}

// Exhaustive search over (edge pair, op pair) per node; among maximal total
// scores the lexicographically smallest (i1, i2, o1, o2) wins.
inline std::vector<std::set<std::pair<std::string, std::size_t>>> brute_force(
    const std::vector<double>& alpha, const std::vector<double>& beta, std::size_t nodes,
    bool en, const OperationSet& ops = default_operation_set()) {
  const std::size_t O = ops.size();
  std::vector<std::set<std::pair<std::string, std::size_t>>> out;
  std::size_t off = 0;
  for (std::size_t j = 2; j < nodes; ++j) {
    std::vector<double> b(beta.begin() + off, beta.begin() + off + j);
    const auto coef = en ? softmax_ref(b) : std::vector<double>(j, 1.0);
    double best = -1;
    std::tuple<std::size_t, std::size_t, std::size_t, std::size_t> arg{};
    for (std::size_t i1 = 0; i1 < j; ++i1)
      for (std::size_t i2 = i1 + 1; i2 < j; ++i2) {
        const auto w1 = softmax_ref({alpha.begin() + (off + i1) * O, alpha.begin() + (off + i1 + 1) * O});
        const auto w2 = softmax_ref({alpha.begin() + (off + i2) * O, alpha.begin() + (off + i2 + 1) * O});
        for (std::size_t o1 = 0; o1 < O; ++o1)
          for (std::size_t o2 = 0; o2 < O; ++o2) {
            if (ops[o1] == OpKind::kZero || ops[o2] == OpKind::kZero) continue;
            const double total = w1[o1] * coef[i1] + w2[o2] * coef[i2];
            if (total > best) {
              best = total;
              arg = {i1, i2, o1, o2};
            }
          }
      }
    auto [i1, i2, o1, o2] = arg;
    out.push_back({{std::string(op_name(ops[o1])), i1}, {std::string(op_name(ops[o2])), i2}});
    off += j;
  }
  return out;
}

inline std::vector<std::set<std::pair<std::string, std::size_t>>> as_sets(const std::vector<GenotypeEdge>& c) {
  std::vector<std::set<std::pair<std::string, std::size_t>>> out;
  for (std::size_t e = 0; e < c.size(); e += 2)
    out.push_back({{c[e].op, c[e].from}, {c[e + 1].op, c[e + 1].from}});
  return out;
}

}  // namespace pcdarts::testing

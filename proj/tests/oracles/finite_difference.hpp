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

// Central-difference gradient oracle. It only ever evaluates the scalar
// function; it never reads the tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pcdarts/core/tensor.hpp"

namespace pcdarts::testing {

/// Numerical gradient of `f` with respect to every element of `wrt`,
/// perturbing values in place and restoring them afterwards.
inline std::vector<std::vector<double>> central_differences(
    const std::function<double()>& f, std::vector<Tensor<double>> wrt,
    double h = 1e-6) {
  NoGradGuard<double> no_grad;
  std::vector<std::vector<double>> out;
  for (auto& t : wrt) {
    std::vector<double> g(t.numel());
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = f();
      v[i] = keep - h;
      const double down = f();
      v[i] = keep;
      g[i] = (up - down) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// ||a - b|| / max(||a||, ||b||), with both vectors flattened.
inline double relative_error(const std::vector<std::vector<double>>& a,
                             const std::vector<std::vector<double>>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      diff += (a[k][i] - b[k][i]) * (a[k][i] - b[k][i]);
      na += a[k][i] * a[k][i];
      nb += b[k][i] * b[k][i];
    }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / denom;
}

/// Runs `build` (which returns a scalar loss) once with the tape to collect
/// analytic gradients, then compares against central differences.
inline double gradient_check(const std::function<Tensor<double>()>& build,
                             std::vector<Tensor<double>> wrt, double h = 1e-6) {
  for (auto& t : wrt) t.zero_grad();
  Tape<double>::local().clear();
  auto loss = build();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) {
    std::vector<double> g(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }
  auto numeric = central_differences([&] { return build().item(); }, wrt, h);
  return relative_error(analytic, numeric);
}

}  // namespace pcdarts::testing

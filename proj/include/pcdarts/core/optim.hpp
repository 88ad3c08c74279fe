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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcdarts/core/tensor.hpp"

namespace pcdarts {

/// lr0 * (1 + cos(pi * t / T)) / 2, for 0 <= t <= T.
inline double cosine_lr(std::size_t t, std::size_t total, double lr0) {
  if (total == 0) throw std::invalid_argument("cosine_lr: total steps must be > 0");
  if (t > total) {
    throw std::invalid_argument("cosine_lr: step " + std::to_string(t) +
                                " exceeds total " + std::to_string(total));
  }
  return lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) /
                         static_cast<double>(total)));
}

namespace detail {

template <class T>
void require_grads(const std::vector<Tensor<T>>& params, const char* who) {
  for (const auto& p : params) {
    if (!p.has_grad()) {
      throw std::invalid_argument(std::string(who) + ": parameter '" +
                                  (p.name().empty() ? "<unnamed>" : p.name()) +
                                  "' has no gradient");
    }
  }
}

}  // namespace detail

template <class T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params) p.zero_grad();
}

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 3e-4;
};

/// Momentum SGD with L2 weight decay folded into the gradient:
/// d = g + wd*p; buf = m*buf + d (buf = d on first use); p -= lr*buf.
template <class T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, SgdOptions opts)
      : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) buf_.emplace_back(p.numel(), T(0));
  }

  void step(double lr) {
    detail::require_grads(params_, "sgd_step");
    const T wd = static_cast<T>(opts_.weight_decay);
    const T mom = static_cast<T>(opts_.momentum);
    const T rate = static_cast<T>(lr);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto w = params_[k].mutable_data();
      const auto g = params_[k].grad();
      auto& buf = buf_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T d = g[i] + wd * w[i];
        buf[i] = steps_ == 0 ? d : mom * buf[i] + d;
        w[i] -= rate * buf[i];
      }
    }
    ++steps_;
  }

  void zero_grad() { zero_grads(params_); }
  std::uint64_t steps() const noexcept { return steps_; }
  const std::vector<Tensor<T>>& params() const noexcept { return params_; }
  const std::vector<std::vector<T>>& momentum_buffers() const noexcept {
    return buf_;
  }

 private:
  std::vector<Tensor<T>> params_;
  SgdOptions opts_;
  std::vector<std::vector<T>> buf_;
  std::uint64_t steps_ = 0;
};

struct AdamOptions {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

/// Adam with bias correction; weight decay is added to the gradient.
template <class T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamOptions opts)
      : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  void step(double lr) {
    detail::require_grads(params_, "adam_step");
    ++steps_;
    const double b1 = opts_.beta1, b2 = opts_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const T wd = static_cast<T>(opts_.weight_decay);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto w = params_[k].mutable_data();
      const auto g = params_[k].grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T d = g[i] + wd * w[i];
        m[i] = static_cast<T>(b1) * m[i] + static_cast<T>(1 - b1) * d;
        v[i] = static_cast<T>(b2) * v[i] + static_cast<T>(1 - b2) * d * d;
        const T mhat = m[i] / static_cast<T>(c1);
        const T vhat = v[i] / static_cast<T>(c2);
        w[i] -= static_cast<T>(lr) * mhat /
                (std::sqrt(vhat) + static_cast<T>(opts_.eps));
      }
    }
  }

  void zero_grad() { zero_grads(params_); }
  std::uint64_t steps() const noexcept { return steps_; }
  const std::vector<Tensor<T>>& params() const noexcept { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions opts_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t steps_ = 0;
};

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (const T g : p.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& p : params)
      for (auto& g : p.mutable_grad()) g *= f;
  }
  return norm;
}

}  // namespace pcdarts

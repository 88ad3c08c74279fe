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

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pcdarts/core/primitives.hpp"
#include "pcdarts/core/tensor.hpp"

namespace pcdarts {

// ---------------------------------------------------------------------------
// Operation set
// ---------------------------------------------------------------------------

/// Candidate operations. The enumerator order is the global column order of
/// every alpha matrix.
enum class OpKind : int {
  kSepConv3x3 = 0,
  kSepConv5x5,
  kDilConv3x3,
  kDilConv5x5,
  kMaxPool3x3,
  kAvgPool3x3,
  kSkipConnect,
  kZero,
};

inline constexpr std::array<OpKind, 8> kAllOps = {
    OpKind::kSepConv3x3, OpKind::kSepConv5x5, OpKind::kDilConv3x3,
    OpKind::kDilConv5x5, OpKind::kMaxPool3x3, OpKind::kAvgPool3x3,
    OpKind::kSkipConnect, OpKind::kZero};

using OperationSet = std::vector<OpKind>;

inline OperationSet default_operation_set() {
  return OperationSet(kAllOps.begin(), kAllOps.end());
}

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kSepConv3x3: return "sep_conv_3x3";
    case OpKind::kSepConv5x5: return "sep_conv_5x5";
    case OpKind::kDilConv3x3: return "dil_conv_3x3";
    case OpKind::kDilConv5x5: return "dil_conv_5x5";
    case OpKind::kMaxPool3x3: return "max_pool_3x3";
    case OpKind::kAvgPool3x3: return "avg_pool_3x3";
    case OpKind::kSkipConnect: return "skip_connect";
    case OpKind::kZero: return "zero";
  }
  return "?";
}

inline std::optional<OpKind> op_from_name(std::string_view name) {
  for (auto k : kAllOps)
    if (op_name(k) == name) return k;
  if (name == "none") return OpKind::kZero;
  return std::nullopt;
}

inline bool is_weight_free(OpKind kind) {
  switch (kind) {
    case OpKind::kMaxPool3x3:
    case OpKind::kAvgPool3x3:
    case OpKind::kSkipConnect:
    case OpKind::kZero:
      return true;
    default:
      return false;
  }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

enum class Mode { kTrain, kEval };

/// Callback receiving each named tensor owned by a layer. `trainable` is false
/// for buffers such as batch-norm running statistics.
template <class T>
using TensorVisitor =
    std::function<void(const std::string& name, Tensor<T>& t, bool trainable)>;

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual void visit(const std::string& /*prefix*/, const TensorVisitor<T>& /*fn*/) {}
};

struct LayerOptions {
  bool bn_affine = false;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

inline std::string join_name(const std::string& prefix, const std::string& n) {
  return prefix.empty() ? n : prefix + "." + n;
}

template <class T>
Tensor<T> kaiming_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  return Tensor<T>::randn(std::move(shape), rng, stddev, true);
}

template <class T>
class BatchNorm2d : public Layer<T> {
 public:
  BatchNorm2d(std::size_t channels, const LayerOptions& opts)
      : running_mean_(Tensor<T>::zeros({channels})),
        running_var_(Tensor<T>::full({channels}, T(1))),
        attrs_{true, opts.bn_momentum, opts.bn_eps} {
    if (opts.bn_affine) {
      gamma_ = Tensor<T>::full({channels}, T(1), true);
      beta_ = Tensor<T>::zeros({channels}, true);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    auto attrs = attrs_;
    attrs.training = mode == Mode::kTrain;
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, attrs);
  }

  void visit(const std::string& prefix, const TensorVisitor<T>& fn) override {
    if (gamma_.defined()) {
      fn(join_name(prefix, "weight"), gamma_, true);
      fn(join_name(prefix, "bias"), beta_, true);
    }
    fn(join_name(prefix, "running_mean"), running_mean_, false);
    fn(join_name(prefix, "running_var"), running_var_, false);
  }

 private:
  Tensor<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  BatchNormAttrs attrs_;
};

template <class T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(std::size_t cin, std::size_t cout, std::size_t kernel,
         Conv2dAttrs attrs, std::mt19937_64& rng)
      : attrs_(attrs) {
    if (cin == 0 || cout == 0 || attrs.groups == 0 || cin % attrs.groups ||
        cout % attrs.groups) {
      throw ShapeError("conv2d layer: invalid channels " + std::to_string(cin) +
                       " -> " + std::to_string(cout) + " with groups " +
                       std::to_string(attrs.groups));
    }
    const std::size_t cin_pg = cin / attrs.groups;
    weight_ = kaiming_normal<T>({cout, cin_pg, kernel, kernel},
                                cin_pg * kernel * kernel, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    return conv2d(x, weight_, attrs_);
  }
  void visit(const std::string& prefix, const TensorVisitor<T>& fn) override {
    fn(join_name(prefix, "weight"), weight_, true);
  }

 private:
  Tensor<T> weight_;
  Conv2dAttrs attrs_;
};

/// A fixed chain of layers with optional leading ReLU, applied in order.
template <class T>
class Sequential : public Layer<T> {
 public:
  struct Entry {
    std::string name;
    std::unique_ptr<Layer<T>> layer;  // null entry means ReLU
  };

  Sequential& relu() {
    entries_.push_back({"", nullptr});
    return *this;
  }
  Sequential& add(std::string name, std::unique_ptr<Layer<T>> layer) {
    entries_.push_back({std::move(name), std::move(layer)});
    return *this;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> h = x;
    for (auto& e : entries_) h = e.layer ? e.layer->forward(h, mode) : pcdarts::relu(h);
    return h;
  }
  void visit(const std::string& prefix, const TensorVisitor<T>& fn) override {
    for (auto& e : entries_)
      if (e.layer) e.layer->visit(join_name(prefix, e.name), fn);
  }

 private:
  std::vector<Entry> entries_;
};

/// ReLU -> conv -> BN; used for cell input preprocessing.
template <class T>
std::unique_ptr<Layer<T>> make_relu_conv_bn(std::size_t cin, std::size_t cout,
                                            std::size_t kernel, std::size_t stride,
                                            std::size_t padding,
                                            const LayerOptions& opts,
                                            std::mt19937_64& rng) {
  auto seq = std::make_unique<Sequential<T>>();
  seq->relu()
      .add("conv", std::make_unique<Conv2d<T>>(cin, cout, kernel,
                                               Conv2dAttrs{stride, padding, 1, 1}, rng))
      .add("bn", std::make_unique<BatchNorm2d<T>>(cout, opts));
  return seq;
}

/// ReLU -> depthwise k x k (dilated) -> pointwise 1x1 -> BN.
template <class T>
void append_dil_block(Sequential<T>& seq, const std::string& tag, std::size_t cin,
                      std::size_t cout, std::size_t kernel, std::size_t stride,
                      std::size_t padding, std::size_t dilation,
                      const LayerOptions& opts, std::mt19937_64& rng) {
  seq.relu()
      .add(tag + "dw", std::make_unique<Conv2d<T>>(
                           cin, cin, kernel, Conv2dAttrs{stride, padding, dilation, cin}, rng))
      .add(tag + "pw", std::make_unique<Conv2d<T>>(cin, cout, 1, Conv2dAttrs{}, rng))
      .add(tag + "bn", std::make_unique<BatchNorm2d<T>>(cout, opts));
}

template <class T>
class PoolBn : public Layer<T> {
 public:
  PoolBn(bool max, std::size_t channels, std::size_t stride, const LayerOptions& opts)
      : max_(max), attrs_{3, stride, 1}, bn_(channels, opts) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    auto p = max_ ? max_pool2d(x, attrs_) : avg_pool2d(x, attrs_);
    return bn_.forward(p, mode);
  }
  void visit(const std::string& prefix, const TensorVisitor<T>& fn) override {
    bn_.visit(join_name(prefix, "bn"), fn);
  }

 private:
  bool max_;
  Pool2dAttrs attrs_;
  BatchNorm2d<T> bn_;
};

template <class T>
class Identity : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override { return x; }
};

/// Halves spatial extents with two 1x1 stride-2 convolutions, the second
/// applied to the input shifted by one pixel, concatenated then normalised.
/// Odd output channel counts give the extra channel to the first branch.
template <class T>
class FactorizedReduce : public Layer<T> {
 public:
  FactorizedReduce(std::size_t cin, std::size_t cout, const LayerOptions& opts,
                   std::mt19937_64& rng)
      : bn_(cout, opts) {
    const std::size_t first = cout - cout / 2;
    const std::size_t second = cout / 2;
    conv1_ = std::make_unique<Conv2d<T>>(cin, first, 1, Conv2dAttrs{2, 0, 1, 1}, rng);
    if (second > 0)
      conv2_ = std::make_unique<Conv2d<T>>(cin, second, 1, Conv2dAttrs{2, 0, 1, 1}, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    auto h = pcdarts::relu(x);
    auto a = conv1_->forward(h, mode);
    Tensor<T> y = a;
    if (conv2_) {
      const auto H = h.dim(2), W = h.dim(3);
      if (H < 2 || W < 2)
        throw ShapeError("factorized_reduce: input " + shape_str(h.shape()) +
                         " too small to shift");
      auto shifted = crop(h, 1, 1, H - 1, W - 1);
      auto b = conv2_->forward(shifted, mode);
      if (b.dim(2) != a.dim(2) || b.dim(3) != a.dim(3))
        throw ShapeError("factorized_reduce: odd spatial extents " +
                         shape_str(x.shape()) + " are not supported");
      y = concat_channels<T>({a, b});
    }
    return bn_.forward(y, mode);
  }
  void visit(const std::string& prefix, const TensorVisitor<T>& fn) override {
    conv1_->visit(join_name(prefix, "conv1"), fn);
    if (conv2_) conv2_->visit(join_name(prefix, "conv2"), fn);
    bn_.visit(join_name(prefix, "bn"), fn);
  }

 private:
  std::unique_ptr<Conv2d<T>> conv1_, conv2_;
  BatchNorm2d<T> bn_;
};

/// Constant-zero output of the strided shape. It records nothing on the
/// tape, so the input receives an exactly-zero gradient through it.
template <class T>
class Zero : public Layer<T> {
 public:
  explicit Zero(std::size_t stride) : stride_(stride) {}
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    detail::require_rank(x, 4, "zero");
    const auto H = (x.dim(2) + stride_ - 1) / stride_;
    const auto W = (x.dim(3) + stride_ - 1) / stride_;
    return Tensor<T>::zeros({x.dim(0), x.dim(1), H, W});
  }

 private:
  std::size_t stride_;
};

/// Builds one candidate operation mapping (B,C,H,W) -> (B,C,H/s,W/s).
template <class T>
std::unique_ptr<Layer<T>> build_op(OpKind kind, std::size_t channels,
                                   std::size_t stride, const LayerOptions& opts,
                                   std::mt19937_64& rng) {
  if (channels == 0) throw std::invalid_argument("build_op: channels must be >= 1");
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("build_op: stride must be 1 or 2, got " +
                                std::to_string(stride));
  const std::size_t C = channels;
  switch (kind) {
    case OpKind::kSepConv3x3:
    case OpKind::kSepConv5x5: {
      const std::size_t k = kind == OpKind::kSepConv3x3 ? 3 : 5;
      auto seq = std::make_unique<Sequential<T>>();
      append_dil_block<T>(*seq, "0.", C, C, k, stride, k / 2, 1, opts, rng);
      append_dil_block<T>(*seq, "1.", C, C, k, 1, k / 2, 1, opts, rng);
      return seq;
    }
    case OpKind::kDilConv3x3:
    case OpKind::kDilConv5x5: {
      const std::size_t k = kind == OpKind::kDilConv3x3 ? 3 : 5;
      auto seq = std::make_unique<Sequential<T>>();
      append_dil_block<T>(*seq, "", C, C, k, stride, 2 * (k / 2), 2, opts, rng);
      return seq;
    }
    case OpKind::kMaxPool3x3:
      return std::make_unique<PoolBn<T>>(true, C, stride, opts);
    case OpKind::kAvgPool3x3:
      return std::make_unique<PoolBn<T>>(false, C, stride, opts);
    case OpKind::kSkipConnect:
      if (stride == 1) return std::make_unique<Identity<T>>();
      return std::make_unique<FactorizedReduce<T>>(C, C, opts, rng);
    case OpKind::kZero:
      return std::make_unique<Zero<T>>(stride);
  }
  throw std::invalid_argument("build_op: unknown operation id " +
                              std::to_string(static_cast<int>(kind)));
}

/// 3x3 convolution -> BN at input resolution.
template <class T>
std::unique_ptr<Layer<T>> build_stem(std::size_t in_channels, std::size_t out_channels,
                                     const LayerOptions& opts, std::mt19937_64& rng) {
  if (in_channels == 0 || out_channels == 0)
    throw std::invalid_argument("build_stem: channels must be positive");
  auto seq = std::make_unique<Sequential<T>>();
  seq->add("conv", std::make_unique<Conv2d<T>>(in_channels, out_channels, 3,
                                               Conv2dAttrs{1, 1, 1, 1}, rng))
      .add("bn", std::make_unique<BatchNorm2d<T>>(out_channels, opts));
  return seq;
}

/// Global average pool followed by a linear map to class logits.
template <class T>
class Classifier {
 public:
  Classifier(std::size_t channels, std::size_t classes, std::mt19937_64& rng) {
    if (channels == 0 || classes == 0)
      throw std::invalid_argument("build_classifier: extents must be positive");
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(channels)));
    weight_ = Tensor<T>::uniform({classes, channels}, rng, -bound, bound, true);
    bias_ = Tensor<T>::uniform({classes}, rng, -bound, bound, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return linear(global_avg_pool(x), weight_, bias_);
  }
  void visit(const std::string& prefix, const TensorVisitor<T>& fn) {
    fn(join_name(prefix, "weight"), weight_, true);
    fn(join_name(prefix, "bias"), bias_, true);
  }

 private:
  Tensor<T> weight_, bias_;
};

}  // namespace pcdarts

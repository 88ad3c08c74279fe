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
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pcdarts {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

/// Raised when a primitive receives inputs whose shapes or attributes are
/// incompatible. The message names the primitive and the offending extents.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a primitive produces NaN or Inf.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(std::string primitive)
      : std::runtime_error("non-finite output from primitive '" + primitive +
                           "'"),
        primitive_(std::move(primitive)) {}
  const std::string& primitive() const noexcept { return primitive_; }

 private:
  std::string primitive_;
};

// ---------------------------------------------------------------------------
// Activation accounting
// ---------------------------------------------------------------------------

/// Counts live activation elements allocated while a tracking scope is open.
/// Thread-local, so concurrent searches keep independent counts.
class ActivationCounter {
 public:
  static ActivationCounter& local() {
    thread_local ActivationCounter counter;
    return counter;
  }

  bool tracking() const noexcept { return depth_ > 0; }
  std::size_t live() const noexcept { return live_; }
  std::size_t peak() const noexcept { return peak_; }

  void reset_peak() noexcept { peak_ = live_; }

  void enter() noexcept { ++depth_; }
  void leave() noexcept { --depth_; }

  void allocate(std::size_t n) noexcept {
    live_ += n;
    peak_ = std::max(peak_, live_);
  }
  void release(std::size_t n) noexcept { live_ -= n; }

 private:
  int depth_ = 0;
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
};

/// Marks every tensor allocated during its lifetime as a tracked activation.
class ActivationScope {
 public:
  ActivationScope() { ActivationCounter::local().enter(); }
  ~ActivationScope() { ActivationCounter::local().leave(); }
  ActivationScope(const ActivationScope&) = delete;
  ActivationScope& operator=(const ActivationScope&) = delete;
};

// ---------------------------------------------------------------------------
// Tensor storage
// ---------------------------------------------------------------------------

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool grad_populated = false;
  std::size_t tracked = 0;
  std::string name;

  TensorNode(Shape s, std::vector<T> values)
      : shape(std::move(s)), data(std::move(values)) {
    auto& counter = ActivationCounter::local();
    if (counter.tracking()) {
      tracked = data.size();
      counter.allocate(tracked);
    }
  }
  ~TensorNode() {
    if (tracked) ActivationCounter::local().release(tracked);
  }
  TensorNode(const TensorNode&) = delete;
  TensorNode& operator=(const TensorNode&) = delete;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

/// Dense N-dimensional array with reverse-mode gradient participation.
///
/// A Tensor is a shared handle: copies alias the same storage. Values are
/// treated as immutable once a primitive has produced them; parameters are
/// mutated only by optimizers and explicit initialisation.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: extents " + shape_str(shape) + " hold " +
                       std::to_string(shape_numel(shape)) +
                       " elements but data has " +
                       std::to_string(values.size()));
    }
    node_ = std::make_shared<Node>(std::move(shape), std::move(values));
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  template <class Rng>
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1),
                      bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  template <class Rng>
  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi,
                        bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor of shape " + shape_str(shape()) +
                       " is not a scalar");
    }
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const noexcept {
    return node_ && node_->requires_grad;
  }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (!on) {
      node_->grad.clear();
      node_->grad_populated = false;
    }
  }

  /// True once backward has deposited a gradient since the last zero_grad.
  bool has_grad() const noexcept { return node_ && node_->grad_populated; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->requires_grad) return;
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    node_->grad_populated = false;
  }

  const std::string& name() const { return node_->name; }
  void set_name(std::string n) { node_->name = std::move(n); }

  /// Deep copy with no tape history.
  Tensor clone() const {
    Tensor out(shape(), std::vector<T>(data().begin(), data().end()));
    return out;
  }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

  bool same(const Tensor& other) const noexcept {
    return node_ == other.node_;
  }

 private:
  std::shared_ptr<Node> node_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

/// Ordered record of executed primitives. Records are appended in execution
/// order, which is a topological order of the dataflow graph; backward
/// replays them in exact reverse.
template <class T>
class Tape {
 public:
  struct Record {
    const char* primitive;
    std::shared_ptr<TensorNode<T>> output;
    std::function<void(std::span<const T>)> backward;
  };

  static Tape& local() {
    thread_local Tape tape;
    return tape;
  }

  bool enabled() const noexcept { return no_grad_depth_ == 0; }
  void push_no_grad() noexcept { ++no_grad_depth_; }
  void pop_no_grad() noexcept { --no_grad_depth_; }

  void append(Record record) { records_.push_back(std::move(record)); }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  void clear() { records_.clear(); }

  const std::vector<Record>& records() const noexcept { return records_; }

 private:
  std::vector<Record> records_;
  int no_grad_depth_ = 0;
};

/// Disables tape recording on the current thread while alive.
template <class T>
class NoGradGuard {
 public:
  NoGradGuard() { Tape<T>::local().push_no_grad(); }
  ~NoGradGuard() { Tape<T>::local().pop_no_grad(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Adds `g` into the gradient of `node`, if the node participates.
template <class T>
inline std::span<T> grad_sink(TensorNode<T>& node) {
  node.ensure_grad();
  node.grad_populated = true;
  return node.grad;
}

/// Back-propagates from a scalar loss through every recorded primitive, then
/// clears the tape. Gradients accumulate into existing buffers.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_str(loss.shape()));
  }
  auto& tape = Tape<T>::local();
  if (!loss.requires_grad()) {
    throw std::invalid_argument(
        "backward: loss does not depend on any tensor requiring grad");
  }
  grad_sink(*loss.node())[0] += T(1);
  const auto& records = tape.records();
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    auto& out = *it->output;
    if (!out.grad_populated) continue;
    it->backward(out.grad);
  }
  tape.clear();
}

// ---------------------------------------------------------------------------
// Helpers shared by primitives
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <class T>
void check_finite(const char* primitive, std::span<const T> values) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw NumericalError(primitive);
  }
}

/// Builds the output tensor of a primitive and, when recording is enabled and
/// some input requires grad, appends a tape record.
template <class T, class BackwardFn>
Tensor<T> emit(const char* primitive, Shape shape, std::vector<T> values,
               bool needs_grad, BackwardFn&& fn) {
  check_finite<T>(primitive, values);
  Tensor<T> out(std::move(shape), std::move(values));
  if (needs_grad && Tape<T>::local().enabled()) {
    out.set_requires_grad(true);
    Tape<T>::local().append(
        {primitive, out.node_ptr(),
         std::function<void(std::span<const T>)>(std::forward<BackwardFn>(fn))});
  }
  return out;
}

}  // namespace detail

}  // namespace pcdarts

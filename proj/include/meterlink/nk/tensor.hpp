//
// Copyright 2026 The meterlink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Dense double-precision tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, which is what
// lets a Tape hold on to the operands it needs for the backward pass. Use
// clone() for an independent copy. Constness is shallow, as for a pointer:
// gradient bookkeeping is allowed through a const handle.
//
// Operations record themselves on the Tape made active by a TapeScope on the
// current thread, but only when at least one operand requires a gradient.
// Without an active tape the same functions run as plain forward passes.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "meterlink/core/error.hpp"

namespace meterlink::nk {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) ss << (i ? "x" : "") << shape[i];
  ss << ']';
  return ss.str();
}

class Tape;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : impl_(std::make_shared<Impl>()) {
    impl_->data.assign(numel_of(shape), fill);
    impl_->shape = std::move(shape);
  }
  Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<Impl>()) {
    if (data.size() != numel_of(shape))
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  // A leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> data) {
    Tensor t(std::move(shape), std::move(data));
    t.set_requires_grad(true);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  std::vector<double>& storage() { return impl_->data; }
  const std::vector<double>& storage() const { return impl_->data; }
  double& operator[](std::size_t i) { return impl_->data[i]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on a tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on) const { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  // Gradient buffer, allocated (zeroed) on first use.
  std::vector<double>& grad_mut() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
  }
  void zero_grad() const { impl_->grad.clear(); }

  Tensor clone() const {
    Tensor t(impl_->shape, impl_->data);
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
  }
  Tensor detach() const { return Tensor(impl_->shape, impl_->data); }

  const Tape* tape() const { return impl_->tape; }
  void set_tape(const Tape* t) const { impl_->tape = t; }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    const Tape* tape = nullptr;
  };
  std::shared_ptr<Impl> impl_;
};

// Ordered record of differentiable operations. backward() replays the
// recorded closures in reverse, so each node is visited exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn) {
    if (consumed_) throw PreconditionError("recording on a tape that was already back-propagated; reset it first");
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds d(output)/d(output) = 1 and accumulates gradients into every
  // tensor that requires them.
  void backward(Tensor& output) {
    if (consumed_) throw PreconditionError("stale tape: backward already ran; reset before reuse");
    if (output.numel() != 1) throw ShapeError("backward requires a scalar output, got " + shape_str(output.shape()));
    if (output.tape() != this) throw PreconditionError("backward output was not recorded on this tape");
    output.grad_mut()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    consumed_ = true;
    nodes_.clear();
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

namespace detail {
inline Tape*& active_tape_slot() {
  thread_local Tape* active = nullptr;
  return active;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

// Makes `tape` the recording target on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::active_tape_slot()) { detail::active_tape_slot() = &tape; }
  ~TapeScope() { detail::active_tape_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording, e.g. for evaluation passes inside a training loop.
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape_slot()) { detail::active_tape_slot() = nullptr; }
  ~NoGradScope() { detail::active_tape_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

inline void backward(Tape& tape, Tensor& output) { tape.backward(output); }

namespace detail {

// Returns the active tape when any input needs a gradient, and marks `out`
// as produced on it.
inline Tape* track(Tensor& out, std::initializer_list<const Tensor*> inputs) {
  Tape* tape = active_tape();
  if (!tape) return nullptr;
  bool any = false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) any = true;
  if (!any) return nullptr;
  out.set_requires_grad(true);
  out.set_tape(tape);
  return tape;
}

inline Tape* track(Tensor& out, const std::vector<Tensor>& inputs) {
  Tape* tape = active_tape();
  if (!tape) return nullptr;
  bool any = false;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) any = true;
  if (!any) return nullptr;
  out.set_requires_grad(true);
  out.set_tape(tape);
  return tape;
}

}  // namespace detail

}  // namespace meterlink::nk

// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "shrink/error.hpp"

namespace shrink {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T> struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad; // empty means "all zero"
  bool requires_grad = false;
  bool is_leaf = true;
  std::size_t tape_pos = 0;
  const char *op = "leaf";
  // Reads this node's grad and accumulates into the inputs captured by the closure.
  std::function<void(TensorImpl &)> backward;

  std::vector<T> &grad_buffer() {
    if (grad.size() != data.size())
      grad.assign(data.size(), T(0));
    return grad;
  }
};

namespace detail {
inline thread_local bool grad_mode_enabled = true;
} // namespace detail

inline bool grad_enabled() { return detail::grad_mode_enabled; }

/// Disables tape recording for its lifetime (evaluation, frozen reference models).
class NoGradGuard {
public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

template <class T> class Tape;

/// Dense row-major tensor. Copies share storage (handle semantics); use
/// clone() for an independent copy. Parameters are leaf tensors with
/// requires_grad set; every op result that depends on one is recorded on the
/// thread's current Tape.
template <class T> class Tensor {
public:
  using value_type = T;

  Tensor() : impl_(std::make_shared<TensorImpl<T>>()) { impl_->data.assign(1, T(0)); }

  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->data.assign(shrink::numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
    if (shrink::numel(shape) != values.size())
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  const Shape &shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  /// Extent of an axis; negative axes count from the back.
  std::size_t dim(int axis) const { return impl_->shape[normalize_axis(axis)]; }

  std::size_t normalize_axis(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
      throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                       shape_str(shape()));
    return static_cast<std::size_t>(a);
  }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T> &values() { return impl_->data; }
  const std::vector<T> &values() const { return impl_->data; }

  T item() const {
    if (numel() != 1)
      throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  T &operator[](std::size_t i) { return impl_->data[i]; }
  const T &operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor &set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }

  /// Gradient as a detached tensor; zeros when nothing has flowed here.
  Tensor grad() const {
    if (has_grad())
      return Tensor(shape(), impl_->grad);
    return Tensor(shape(), T(0));
  }
  std::vector<T> &grad_buffer() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const { return Tensor(shape(), impl_->data); }
  Tensor detach() const { return clone(); }

  const char *op() const { return impl_->op; }

  const std::shared_ptr<TensorImpl<T>> &impl() const { return impl_; }
  bool same_storage(const Tensor &other) const { return impl_ == other.impl_; }

private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Ordered record of op applications. Recording order is execution order,
/// so a reverse sweep is a valid reverse-topological traversal.
template <class T> class Tape {
public:
  static Tape &current() {
    thread_local Tape tape;
    return tape;
  }

  void record(const std::shared_ptr<TensorImpl<T>> &node) {
    node->tape_pos = nodes_.size();
    nodes_.push_back(node);
  }

  std::size_t size() const { return nodes_.size(); }

  void reset() { nodes_.clear(); }

  /// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
  /// Intermediate grads are cleared first, so repeated calls on one graph add
  /// the same contribution again to the leaves.
  void backward(const Tensor<T> &loss) {
    const auto &root = loss.impl();
    if (root->data.size() != 1)
      throw UsageError("backward() needs a scalar loss, got shape " + shape_str(root->shape));
    if (!root->requires_grad)
      throw UsageError("backward() on a tensor that does not require grad");
    if (root->is_leaf) {
      root->grad_buffer()[0] += T(1);
      return;
    }
    if (root->tape_pos >= nodes_.size() || nodes_[root->tape_pos] != root)
      throw UsageError("loss is not recorded on the current tape");
    for (std::size_t i = 0; i <= root->tape_pos; ++i)
      nodes_[i]->grad.clear();
    root->grad_buffer()[0] = T(1);
    for (std::size_t i = root->tape_pos + 1; i-- > 0;) {
      auto &node = *nodes_[i];
      if (node.grad.empty() || !node.backward)
        continue;
      node.backward(node);
    }
  }

private:
  std::vector<std::shared_ptr<TensorImpl<T>>> nodes_;
};

template <class T> void backward(const Tensor<T> &loss) { Tape<T>::current().backward(loss); }

} // namespace shrink

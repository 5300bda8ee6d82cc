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

#include "olvit/error.hpp"

namespace olvit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient flows in
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

// Dense row-major tensor handle. Copies share storage; use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  // Single row of shape {1, n}.
  static Tensor row(std::vector<T> values) {
    const auto n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  // Row/column view for rank-1 and rank-2 tensors (a vector is one row).
  std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return rank() == 1 ? node_->shape[0] : node_->shape[1]; }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T at(std::size_t i) const { return node_->data.at(i); }
  T at(std::size_t r, std::size_t c) const { return node_->data.at(r * cols() + c); }

  // Copy of the values with no gradient history.
  Tensor detach() const { return Tensor(node_->shape, node_->data, false); }
  Tensor clone() const { return Tensor(node_->shape, node_->data, node_->requires_grad); }

  std::vector<T> row_values(std::size_t r) const {
    const auto c = cols();
    return {node_->data.begin() + static_cast<std::ptrdiff_t>(r * c),
            node_->data.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)};
  }

  bool all_finite() const {
    return std::all_of(node_->data.begin(), node_->data.end(), [](T v) { return std::isfinite(v); });
  }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Ordered record of differentiable operations. Entries are appended as ops run,
// so the list is already in topological order.
template <class T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;

  void record(NodePtr output, std::function<void()> backward) {
    entries_.push_back({std::move(output), std::move(backward)});
  }

  std::size_t size() const { return entries_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates in reverse recording order. Leaf
  // gradients accumulate across calls; intermediate gradients are reset.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw DimensionError("backward() requires a scalar loss, got shape " +
                           (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    std::ptrdiff_t start = -1;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      entries_[i].output->grad.clear();
      if (entries_[i].output == loss.node()) start = static_cast<std::ptrdiff_t>(i);
    }
    if (start < 0) throw Error("backward(): loss was not produced on this tape");
    loss.node()->grad.assign(1, T(1));
    for (auto i = start; i >= 0; --i) {
      auto& e = entries_[static_cast<std::size_t>(i)];
      if (e.output->grad.empty()) continue;
      e.backward();
    }
  }

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    NodePtr output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
};

namespace detail {
template <class T>
inline thread_local Tape<T>* active_tape = nullptr;
}  // namespace detail

template <class T>
Tape<T>* active_tape() {
  return detail::active_tape<T>;
}

// Makes `tape` the recording target for ops on this thread until destruction.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(detail::active_tape<T>) { detail::active_tape<T> = &tape; }
  ~TapeScope() { detail::active_tape<T> = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Suspends recording (inference, value-only evaluation).
template <class T>
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape<T>) { detail::active_tape<T> = nullptr; }
  ~NoGradScope() { detail::active_tape<T> = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

}  // namespace olvit

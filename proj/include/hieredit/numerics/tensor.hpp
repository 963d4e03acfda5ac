// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float tensors with an optional gradient buffer, plus the
// reverse-mode tape that records differentiable ops.
//
// A Tensor is a shared handle to an immutable value. Copies alias the same
// storage; use clone() for an independent copy. Only the gradient buffer (and
// parameters updated by an optimizer through mutable_data()) change after
// creation.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hieredit/error.hpp"

namespace hieredit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;

    std::vector<float>& grad_buffer() {
      if (grad.empty()) grad.assign(data.size(), 0.0f);
      return grad;
    }
  };

  Tensor() : node_(std::make_shared<Node>()) { node_->shape = {0}; }

  explicit Tensor(Shape shape) : node_(std::make_shared<Node>()) {
    node_->data.assign(shape_numel(shape), 0.0f);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<float> data) : node_(std::make_shared<Node>()) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, float value) {
    Tensor t(std::move(shape));
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
  }

  static Tensor scalar(float value) { return Tensor({1}, {value}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  std::size_t rows() const {
    require_rank2("rows");
    return node_->shape[0];
  }
  std::size_t cols() const {
    require_rank2("cols");
    return node_->shape[1];
  }

  std::span<const float> data() const { return node_->data; }
  const float* ptr() const { return node_->data.data(); }
  const float* row_ptr(std::size_t r) const { return node_->data.data() + r * node_->shape[1]; }

  // Writable view. Reserved for freshly built tensors and optimizer updates.
  std::span<float> mutable_data() { return node_->data; }
  float* mutable_ptr() { return node_->data.data(); }

  float operator[](std::size_t i) const { return node_->data[i]; }
  float at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape[1] + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  // All-zero view when no gradient reached this tensor.
  std::vector<float> grad() const {
    return node_->grad.empty() ? std::vector<float>(numel(), 0.0f) : node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const { return Tensor(shape(), node_->data); }

  // Same values, detached from any recorded graph.
  Tensor detach() const { return clone(); }

  Tensor reshape(Shape shape) const {
    if (shape_numel(shape) != numel()) throw DimensionError("reshape to " + shape_str(shape));
    return Tensor(std::move(shape), node_->data);
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  void require_rank2(const char* what) const {
    if (node_->shape.size() != 2) {
      throw DimensionError(std::string(what) + "() on tensor of shape " + shape_str(node_->shape));
    }
  }

  std::shared_ptr<Node> node_;
};

// Reverse-mode tape. Constructing a Tape makes it the recording tape for the
// current thread until it is destroyed; ops executed while a tape is active
// and any input requires a gradient are recorded in execution order.
class Tape {
 public:
  Tape() : previous_(slot()) { slot() = this; }
  ~Tape() { slot() = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return slot(); }

  void record(std::function<void()> backward) { entries_.push_back(std::move(backward)); }

  std::size_t size() const { return entries_.size(); }

  void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
      throw ContractError("backward() on a loss that does not depend on any gradient leaf");
    }
    loss.node()->grad_buffer()[0] += 1.0f;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  static Tape*& slot() {
    thread_local Tape* active = nullptr;
    return active;
  }

  Tape* previous_;
  std::vector<std::function<void()>> entries_;
};

inline void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (tape == nullptr) throw ContractError("backward() called with no active tape");
  tape->backward(loss);
}

namespace detail {

inline bool recording(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline void check_finite(const Tensor& t, const char* op) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Adds `values` into the gradient of `node` if it takes one.
inline void accumulate(const std::shared_ptr<Tensor::Node>& node, std::span<const float> values) {
  if (!node->requires_grad) return;
  auto& g = node->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += values[i];
}

inline std::span<const float> out_grad(const std::shared_ptr<Tensor::Node>& node) {
  return node->grad_buffer();
}

}  // namespace detail

// FNV-1a over the raw bytes of the values; used to fingerprint frozen weights
// and cached token slabs.
inline std::uint64_t fingerprint(std::span<const float> values, std::uint64_t seed = 1469598103934665603ull) {
  std::uint64_t h = seed;
  for (float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 4; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace hieredit

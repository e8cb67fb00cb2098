// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with tape-free reverse-mode differentiation. Every op result
// keeps shared references to its inputs plus a closure that pushes its
// gradient back; Tensor::backward() walks that graph in reverse topological
// order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diaformer {

#ifdef DIAFORMER_FLOAT32
using real = float;
#else
using real = double;
#endif

/// Additive attention-mask value standing in for negative infinity.
inline constexpr real kMaskedScore = static_cast<real>(-1e9);

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<real>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<real> values,
                     bool requires_grad = false);
  static Tensor scalar(real value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t i) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const real> data() const { return node_->value; }
  std::span<real> mutable_data() { return node_->value; }
  real item() const;
  real at(std::size_t flat_index) const { return node_->value.at(flat_index); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient buffer; all zeros if nothing has been accumulated yet.
  std::vector<real> grad() const;
  std::span<real> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Leaves accumulate into their grad.
  void backward() const;

  /// Same values, no graph history.
  Tensor detach() const;

  // Internal graph access for op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace diaformer

// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "diaformer/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace diaformer {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<real>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), real{0});
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), real{0}, requires_grad);
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->value.assign(numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<real> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(real value) { return from({}, {value}); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const { return shape().at(i); }

real Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

std::vector<real> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<real>(node_->value.size(), real{0});
  return node_->grad;
}

std::span<real> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::backward() const {
  if (size() != 1) {
    throw DimensionError("backward() needs a scalar, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; recursion depth would track graph depth.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += real{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace diaformer

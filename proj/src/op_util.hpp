#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "decomamba/tensor.hpp"

namespace dm::detail {

template <typename T>
void check_finite(const char* op, std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

/// Wraps freshly computed output data into a tensor, recording `backward`
/// on the tape when any input participates in gradient computation.
template <typename T, typename Backward>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      const std::vector<Tensor<T>>& inputs, Backward&& backward) {
  check_finite<T>(op, data);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || (in.defined() && in.requires_grad());
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) node->inputs.push_back(in.node_ptr());
    }
    node->backward = std::forward<Backward>(backward);
  }
  return Tensor<T>(std::move(node));
}

/// Gradient buffer of an input, or an empty span when it takes no gradient.
template <typename T>
std::span<T> grad_of(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return {};
  return t.node()->grad_buffer();
}

inline int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return axis;
}

/// Splits a shape around an axis into (outer, extent, inner) counts.
struct AxisSplit {
  int64_t outer = 1;
  int64_t extent = 1;
  int64_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
  s.extent = shape[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace dm::detail

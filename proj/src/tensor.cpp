#include "decomamba/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace dm {

namespace {
thread_local bool g_grad_enabled = true;
std::string g_faulty_op;
}  // namespace

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace testing {
void inject_backward_fault(const std::string& op_name) { g_faulty_op = op_name; }
const std::string& injected_backward_fault() { return g_faulty_op; }
}  // namespace testing

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->data.assign(static_cast<size_t>(numel_of(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> values, bool requires_grad) {
  if (numel_of(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
int64_t Tensor<T>::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[static_cast<size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) throw ShapeError("at(): rank mismatch");
  int64_t offset = 0;
  size_t axis = 0;
  for (int64_t i : index) {
    const int64_t extent = node_->shape[axis++];
    if (i < 0 || i >= extent) throw ShapeError("at(): index out of range");
    offset = offset * extent + i;
  }
  return node_->data[static_cast<size_t>(offset)];
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() without a seed requires a scalar, got " + shape_str(shape()));
  }
  const T one = 1;
  backward(std::span<const T>(&one, 1));
}

template <typename T>
void Tensor<T>::backward(std::span<const T> seed) const {
  if (static_cast<int64_t>(seed.size()) != numel()) {
    throw ShapeError("backward seed size mismatch");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto root = node_->grad_buffer();
  for (size_t i = 0; i < root.size(); ++i) root[i] += seed[i];

  const std::string& faulty = testing::injected_backward_fault();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->backward) continue;
    if (node->grad.empty()) {
      node->backward = nullptr;
      continue;
    }
    if (!faulty.empty() && faulty == node->op) {
      std::vector<T> flipped(node->grad.size());
      std::transform(node->grad.begin(), node->grad.end(), flipped.begin(),
                     [](T g) { return -g; });
      node->backward(flipped);
    } else {
      node->backward(node->grad);
    }
    // Interior nodes release their gradient and saved state once consumed.
    node->backward = nullptr;
    if (node != node_.get()) std::vector<T>().swap(node->grad);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), node_->data, false);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace dm

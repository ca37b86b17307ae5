#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "faust/error.hpp"

namespace faust {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
class Tensor;

namespace detail {

/// One value on the gradient tape. Leaves are created by the user (inputs,
/// parameters); interior nodes are created by operations and remember their
/// inputs plus a closure that pushes the node's gradient back into them.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array with optional participation in reverse-mode
/// differentiation.
///
/// Tensor is a handle: copies share the underlying node, the same way a
/// parameter is shared between a model and its optimizer. Use clone() for an
/// independent copy and detach() to cut a value out of the tape.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() : Tensor(Shape{}, std::vector<T>{T{0}}) {}

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<detail::Node<T>>()) {
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                       std::to_string(numel(shape)) + " values, got " + std::to_string(data.size()));
    }
    for (auto e : shape) {
      if (e == 0) throw ShapeError("tensor: zero extent in shape " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T{0}); }

  static Tensor full(Shape shape, T value) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  /// Matrix from nested rows; convenient in tests.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    std::vector<T> data;
    std::size_t cols = rows.begin()->size();
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("tensor: ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(data));
  }

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor(Shape{values.size()}, std::vector<T>(values));
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  /// Writable view of a leaf's values (parameter updates, test fixtures).
  std::span<T> mutable_data() {
    if (!node_->leaf) throw Error(std::string("tensor: cannot write into the output of ") + node_->op);
    return node_->data;
  }

  T operator[](std::size_t i) const { return node_->data[i]; }

  T item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }

  Tensor& set_requires_grad(bool on) {
    if (!node_->leaf) throw Error("tensor: requires_grad can only be set on leaves");
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
    return *this;
  }

  bool is_leaf() const { return node_->leaf; }
  const char* op_name() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }

  /// Gradient as a standalone tensor (zeros when none has been accumulated).
  Tensor grad_tensor() const {
    if (node_->grad.empty()) return zeros(shape());
    return Tensor(shape(), node_->grad);
  }

  void zero_grad() { node_->grad.clear(); }

  /// New leaf holding a copy of the values, outside any tape.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  /// Independent copy of values and the requires_grad flag.
  Tensor clone() const {
    Tensor t(shape(), node_->data);
    t.node_->requires_grad = node_->requires_grad && node_->leaf;
    return t;
  }

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  /// calls until zero_grad(); interior gradients are rebuilt on every call.
  void backward() const;

  const NodePtr& node() const { return node_; }

  /// Builds an operation result. The node is attached to the tape only when
  /// some input requires a gradient; otherwise the inputs are not retained.
  static Tensor from_op(const char* op, Shape shape, std::vector<T> data,
                        std::vector<NodePtr> inputs, std::function<void(detail::Node<T>&)> backward_fn) {
    Tensor out(std::move(shape), std::move(data));
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n->requires_grad; });
    out.node_->op = op;
    out.node_->leaf = !any;
    if (any) {
      out.node_->requires_grad = true;
      out.node_->inputs = std::move(inputs);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

 private:
  NodePtr node_;
};

template <typename T>
void Tensor<T>::backward() const {
  if (size() != 1) throw ValueError("backward: loss must be a scalar, got shape " + to_string(shape()));
  if (!node_->requires_grad) throw ValueError("backward: loss is not on the gradient tape");

  // Iterative post-order DFS gives a topological order of the reachable DAG.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<const detail::Node<T>*> seen;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->leaf) n->grad.assign(n->data.size(), T{0});
  }
  node_->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* n = *it;
    if (!n->leaf && n->backward_fn) n->backward_fn(*n);
  }
  for (auto* n : order) {
    if (!n->leaf && n != node_.get()) n->grad.clear();
  }
}

}  // namespace faust

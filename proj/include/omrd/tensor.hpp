#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace omrd {

// Row-major shape; [H, W, C] for feature maps, [R, C] for matrices, [D] for
// vectors, [] is not used (scalars are shape [1]).
using Shape = std::vector<int>;

template <typename T>
using ArrX = Eigen::Array<T, Eigen::Dynamic, 1>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  ArrX<T> value;
  ArrX<T> grad;  // sized lazily by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward;
};

// Accumulates into a parent's gradient, skipping constants.
template <typename T, typename Expr>
inline void accumulate(Node<T>& parent, const Expr& g) {
  if (parent.requires_grad) parent.grad += g;
}

}  // namespace detail

// Dense tensor handle with reverse-mode differentiation. Values are flat
// row-major Eigen arrays; handles share the underlying graph node. Nodes are
// immutable after construction except for gradient accumulation (and the
// optimizer's in-place parameter update between forward passes).
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node<T>> n) : node_(std::move(n)) {}

  static Tensor constant(Shape shape, ArrX<T> values) {
    return make_leaf(std::move(shape), std::move(values), false);
  }
  static Tensor constant(Shape shape, const std::vector<T>& values) {
    ArrX<T> v = Eigen::Map<const ArrX<T>>(values.data(), static_cast<Eigen::Index>(values.size()));
    return make_leaf(std::move(shape), std::move(v), false);
  }
  static Tensor full(Shape shape, T value) {
    ArrX<T> v = ArrX<T>::Constant(numel(shape), value);
    return make_leaf(std::move(shape), std::move(v), false);
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor scalar(T value) { return full({1}, value); }

  static Tensor parameter(Shape shape, ArrX<T> values) {
    return make_leaf(std::move(shape), std::move(values), true);
  }
  static Tensor parameter(Shape shape, const std::vector<T>& values) {
    ArrX<T> v = Eigen::Map<const ArrX<T>>(values.data(), static_cast<Eigen::Index>(values.size()));
    return make_leaf(std::move(shape), std::move(v), true);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return node_->value.size(); }

  const ArrX<T>& value() const { return node_->value; }
  // In-place mutation hook for the optimizer and finite-difference probes.
  ArrX<T>& value_mut() { return node_->value; }
  T operator[](std::int64_t i) const { return node_->value[i]; }
  T item() const {
    check(size() == 1, "item() requires a scalar tensor, got " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const ArrX<T>& grad() const {
    check(has_grad(), "gradient not populated; call backward() on a downstream scalar first");
    return node_->grad;
  }

  bool all_finite() const {
    return node_->value.isFinite().all();
  }

  // Fresh leaf with entry i replaced; used by the finite-difference checker so
  // probed evaluations never mutate the original graph.
  Tensor with_value(std::int64_t i, T v) const {
    ArrX<T> values = node_->value;
    values[i] = v;
    return make_leaf(node_->shape, std::move(values), node_->requires_grad);
  }

  Tensor detached() const { return make_leaf(node_->shape, node_->value, false); }

  // Reverse-mode sweep from a scalar root. Zeroes and repopulates gradients of
  // every reachable node that requires them.
  void backward() const {
    check(defined() && size() == 1, "backward() root must be a defined scalar");
    std::vector<detail::Node<T>*> order = topo_order();
    for (detail::Node<T>* n : order) {
      if (n->requires_grad) n->grad = ArrX<T>::Zero(n->value.size());
    }
    if (!node_->requires_grad) return;
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<T>* n = *it;
      if (n->requires_grad && n->backward) n->backward(*n);
    }
  }

  std::shared_ptr<detail::Node<T>> node() const { return node_; }

  // Iteratively severs parent links of the graph below this tensor. Leaf
  // parameters survive; call between training steps so node chains never
  // unwind recursively in shared_ptr destructors.
  void release_graph() const {
    if (!defined()) return;
    std::vector<detail::Node<T>*> order = topo_order();
    for (detail::Node<T>* n : order) {
      n->parents.clear();
      n->backward = nullptr;
    }
  }

 private:
  static Tensor make_leaf(Shape shape, ArrX<T> values, bool requires_grad) {
    check(numel(shape) == values.size(),
          "value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    check(numel(shape) > 0, "empty shapes are not supported: " + shape_str(shape));
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  // Post-order DFS: every node appears after all of its parents.
  std::vector<detail::Node<T>*> topo_order() const {
    std::vector<detail::Node<T>*> order;
    std::unordered_set<const detail::Node<T>*> visited;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::Node<T>* p = n->parents[next++].get();
        if (visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<detail::Node<T>> node_;
};

// Builds an interior graph node. The backward callback reads node.grad and
// accumulates into node.parents; it is dropped entirely when no parent needs
// gradients.
template <typename T>
Tensor<T> make_node(Shape shape, ArrX<T> value, std::vector<Tensor<T>> parents,
                    std::function<void(detail::Node<T>&)> backward) {
  check(numel(shape) == value.size(), "node value size does not match shape " + shape_str(shape));
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->parents.reserve(parents.size());
  bool rg = false;
  for (const Tensor<T>& p : parents) {
    check(p.defined(), "undefined tensor passed as op input");
    rg = rg || p.node()->requires_grad;
    n->parents.push_back(p.node());
  }
  n->requires_grad = rg;
  if (rg) n->backward = std::move(backward);
  return Tensor<T>(std::move(n));
}

template <typename T>
Eigen::Map<const MatRM<T>> as_matrix(const ArrX<T>& flat, int rows, int cols) {
  return Eigen::Map<const MatRM<T>>(flat.data(), rows, cols);
}

template <typename T>
Eigen::Map<MatRM<T>> as_matrix_mut(ArrX<T>& flat, int rows, int cols) {
  return Eigen::Map<MatRM<T>>(flat.data(), rows, cols);
}

}  // namespace omrd

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cycledepth/common.hpp"
#include "cycledepth/rng.hpp"

namespace cycledepth {

// Dense 4-D shape in NCHW order.
struct Shape {
  i64 n = 0;
  i64 c = 0;
  i64 h = 0;
  i64 w = 0;

  i64 numel() const { return n * c * h * w; }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  // Leaves accumulate gradients persistently across backward passes;
  // interior nodes use this as per-pass scratch.
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  void ensure_grad() {
    if (static_cast<i64>(grad.size()) != shape.numel()) {
      grad.assign(static_cast<size_t>(shape.numel()), T(0));
    }
  }
};

// Value-semantic handle to a node in the reverse-mode graph.
template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;

  static Tensor from_vector(const Shape& shape, std::vector<T> data, bool requires_grad = false) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
      throw ShapeError("tensor: negative dimension in " + shape.str());
    }
    if (static_cast<i64>(data.size()) != shape.numel()) {
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape.str());
    }
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = shape;
    t.node_->data = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return from_vector(shape, std::vector<T>(static_cast<size_t>(shape.numel()), T(0)),
                       requires_grad);
  }

  static Tensor full(const Shape& shape, T value, bool requires_grad = false) {
    return from_vector(shape, std::vector<T>(static_cast<size_t>(shape.numel()), value),
                       requires_grad);
  }

  static Tensor uniform(const Shape& shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false) {
    std::vector<T> data(static_cast<size_t>(shape.numel()));
    for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    return from_vector(shape, std::move(data), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return require().shape; }
  i64 numel() const { return require().shape.numel(); }
  bool requires_grad() const { return require().requires_grad; }
  bool is_leaf() const { return require().is_leaf(); }

  std::span<const T> data() const { return {require().data.data(), require().data.size()}; }

  // In-place mutation is a leaf-only affordance (graph inputs, parameters).
  std::span<T> mutable_data() {
    Node& n = require();
    if (!n.is_leaf()) throw ValueError("mutable_data: tensor is not a graph leaf");
    return {n.data.data(), n.data.size()};
  }

  std::span<const T> grad() const {
    Node& n = require();
    n.ensure_grad();
    return {n.grad.data(), n.grad.size()};
  }

  void zero_grad() {
    Node& n = require();
    n.grad.assign(static_cast<size_t>(n.shape.numel()), T(0));
  }

  T value() const {
    const Node& n = require();
    if (n.shape.numel() != 1) {
      throw ShapeError("value: tensor " + n.shape.str() + " is not scalar");
    }
    return n.data[0];
  }

  T at(i64 in, i64 ic, i64 ih, i64 iw) const {
    const Node& nd = require();
    const Shape& s = nd.shape;
    return nd.data[static_cast<size_t>(((in * s.c + ic) * s.h + ih) * s.w + iw)];
  }

  T grad_at(i64 in, i64 ic, i64 ih, i64 iw) const {
    Node& nd = require();
    nd.ensure_grad();
    const Shape& s = nd.shape;
    return nd.grad[static_cast<size_t>(((in * s.c + ic) * s.h + ih) * s.w + iw)];
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  Node& require() const {
    if (!node_) throw ValueError("tensor: undefined handle");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

// Builds an op node. The backward closure receives the finished node and must
// accumulate into the grads of whichever parents require them.
template <typename T>
Tensor<T> make_op(const Shape& shape, std::vector<T> data,
                  std::vector<std::shared_ptr<TensorNode<T>>> parents,
                  std::function<void(TensorNode<T>&)> backward_fn) {
  Tensor<T> out = Tensor<T>::from_vector(shape, std::move(data));
  bool needs = false;
  for (const auto& p : parents) {
    if (p && p->requires_grad) {
      needs = true;
      break;
    }
  }
  if (needs) {
    auto node = out.node();
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return out;
}

// Reverse-mode pass from a scalar loss. Leaf gradients accumulate across
// calls; interior scratch gradients are reset on every pass.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw ValueError("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + loss.shape().str());
  }
  auto root = loss.node();
  if (!root->requires_grad) return;  // nothing reachable wants gradients

  // Iterative post-order DFS over the requires_grad subgraph.
  std::vector<TensorNode<T>*> topo;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode<T>* parent = node->parents[idx].get();
      ++idx;
      if (parent && parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  for (TensorNode<T>* node : topo) {
    if (!node->is_leaf()) node->grad.assign(static_cast<size_t>(node->shape.numel()), T(0));
  }
  root->ensure_grad();
  root->grad[0] += T(1);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

}  // namespace cycledepth

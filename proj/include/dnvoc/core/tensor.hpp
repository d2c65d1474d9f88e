// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Minimal reverse-mode automatic differentiation over dense row-major tensors.
//
// A Var is a handle to a graph node. Every op produces a fresh node holding its
// value and (when any input requires gradients) a closure that scatters the
// node's gradient back into its parents. The graph lives exactly as long as the
// handles that reference it, so dropping the loss Var after backward() frees
// every intermediate buffer.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dnvoc::ad {

using Shape = std::vector<int>;

inline std::size_t numel_of(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
}

// Gradient recording is on by default; inference code turns it off with
// NoGradGuard so no closures or parent links are kept.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Var {
 public:
  using value_type = T;

  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Shape shape, std::vector<T> values) {
    if (values.size() != numel_of(shape))
      throw ShapeError("constant: value count does not match shape " +
                       shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Var(std::move(n));
  }

  static Var zeros(Shape shape) {
    std::vector<T> v(numel_of(shape), T(0));
    return constant(std::move(shape), std::move(v));
  }

  static Var scalar(T v) { return constant({1}, {v}); }

  // Leaf that accumulates gradients; used for trainable weights.
  static Var parameter(Shape shape, std::vector<T> values) {
    Var v = constant(std::move(shape), std::move(values));
    v.node_->requires_grad = true;
    return v;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const {
    const int r = static_cast<int>(node_->shape.size());
    return node_->shape.at(static_cast<std::size_t>(i < 0 ? i + r : i));
  }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> value() const { return node_->value; }
  std::span<T> mutable_value() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor is not a scalar");
    return node_->value[0];
  }

  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  // A copy that shares no graph history.
  Var detach() const { return constant(shape(), node_->value); }

  // Seeds d(self)/d(self) = 1 and runs every recorded closure in reverse
  // topological order.
  void backward() const {
    if (numel() != 1) throw ShapeError("backward: loss must be a scalar");
    if (!node_->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node<T>* p = n->parents[idx++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward_fn) {
        n->ensure_grad();
        n->backward_fn(*n);
      }
    }
    // Intermediate gradients are not needed after the sweep; parameters keep
    // theirs because they have no backward_fn.
    for (Node<T>* n : order)
      if (n->backward_fn) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op result. `backward` receives the output node (with its grad
// populated) and must accumulate into the parents it captured.
template <typename T, typename F>
Var<T> make_op(Shape shape, std::vector<T> value,
               std::initializer_list<const Var<T>*> parents, F&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool need = false;
  if (grad_mode())
    for (const Var<T>* p : parents) need = need || p->requires_grad();
  if (need) {
    n->requires_grad = true;
    for (const Var<T>* p : parents) n->parents.push_back(p->node());
    n->backward_fn = std::forward<F>(backward);
  }
  return Var<T>(std::move(n));
}

template <typename T, typename F>
Var<T> make_op(Shape shape, std::vector<T> value,
               const std::vector<Var<T>>& parents, F&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool need = false;
  if (grad_mode())
    for (const auto& p : parents) need = need || p.requires_grad();
  if (need) {
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::forward<F>(backward);
  }
  return Var<T>(std::move(n));
}

// Gradient buffer of a parent, allocated on first use; null when the parent
// does not take part in differentiation.
template <typename T>
T* grad_of(const Var<T>& v) {
  if (!v.requires_grad()) return nullptr;
  v.node()->ensure_grad();
  return v.node()->grad.data();
}

}  // namespace dnvoc::ad

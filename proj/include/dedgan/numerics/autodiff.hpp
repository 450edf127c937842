#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dedgan/errors.hpp"
#include "dedgan/numerics/tensor.hpp"

namespace dedgan {

template <typename Scalar>
struct Node {
  using BackwardFn = std::function<void(const Tensor<Scalar>& out_grad)>;

  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  Tensor<Scalar>& ensure_grad() {
    if (grad.empty()) grad = Tensor<Scalar>::zeros(value.shape());
    return grad;
  }
};

/// Handle to a value on the differentiation tape. Copies share the node, so a
/// parameter handle held by a network and by an optimizer refer to the same
/// storage. The graph is built by running ops and released when the last
/// handle to the loss goes away.
template <typename Scalar>
class Var {
 public:
  using NodeT = Node<Scalar>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<NodeT>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(Index axis) const { return node_->value.dim(axis); }
  Index size() const { return node_->value.size(); }
  Scalar item() const {
    if (size() != 1) throw DimensionError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  Tensor<Scalar>& mutable_grad() const { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.set_zero();
  }

  /// Drop tape history; the result is a leaf with the same value.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<NodeT>& node() const { return node_; }

  /// Reverse pass from a scalar root. Leaf gradients accumulate.
  void backward() const;

 private:
  std::shared_ptr<NodeT> node_;

  template <typename S>
  friend Var<S> make_result(Tensor<S> value, std::vector<Var<S>> parents, std::string op,
                            typename Node<S>::BackwardFn backward);
};

/// Wraps an op result. Raises NumericError on non-finite output. The backward
/// closure is kept only when some parent participates in differentiation.
using VarF = Var<float>;
using VarD = Var<double>;

template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::vector<Var<Scalar>> parents, std::string op,
                        typename Node<Scalar>::BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(op + ": produced a non-finite value");
  Var<Scalar> out;
  out.node_ = std::make_shared<Node<Scalar>>();
  out.node_->value = std::move(value);
  out.node_->op = std::move(op);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node());
    out.node_->backward = std::move(backward);
  }
  return out;
}

template <typename Scalar>
void Var<Scalar>::backward() const {
  if (size() != 1) throw DimensionError("backward: root must be a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order without recursion.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodeT* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    n->backward(n->grad);
    if (!n->parents.empty()) n->grad = Tensor<Scalar>();  // interior grads are not needed afterwards
  }
}

}  // namespace dedgan

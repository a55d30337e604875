#pragma once

// Reverse-mode automatic differentiation over a dynamically recorded tape.
//
// A Tape owns every value produced during a forward pass. Operations append
// a node holding the output value and a closure that maps the output
// gradient onto the gradients of its inputs. Because a node can only be
// recorded after its inputs exist, append order is already a topological
// order, and backward() is a single reverse sweep.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <string>
#include <utility>

#include "agenet/error.hpp"
#include "agenet/tensor.hpp"

namespace agenet {

/// Layers with stochastic or batch-dependent behaviour switch on this.
enum class Mode { train, infer };

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape<T>* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
using Gradients = std::map<std::size_t, Tensor<T>>;

template <typename T>
class Tape {
 public:
  /// Receives the gradient of the node's output; pushes contributions to inputs via accumulate().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, true, false, nullptr});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Records an op result. The closure is kept only if some input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) {
      check_owned(v);
      needs = needs || node(v).requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, false, false, needs ? std::move(fn) : nullptr});
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(const Var<T>& v) const {
    check_owned(v);
    return nodes_[v.id()].value;
  }

  bool requires_grad(const Var<T>& v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
  }

  /// Gradient buffer for v, zero-initialised on first use; nullptr when v needs no gradient.
  Tensor<T>* grad_buffer(const Var<T>& v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape(), T{0});
      n.has_grad = true;
    }
    return &n.grad;
  }

  void accumulate(const Var<T>& v, const Tensor<T>& g) {
    Tensor<T>* buf = grad_buffer(v);
    if (!buf) return;
    if (g.size() != buf->size()) {
      throw ShapeError("gradient " + shape_str(g.shape()) + " does not match value " + shape_str(buf->shape()));
    }
    for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
  }

  /// Reverse sweep from a scalar loss. Returns a gradient for every leaf that
  /// requires one; leaves the loss does not depend on get zero tensors.
  Gradients<T> backward(const Var<T>& loss) {
    if (loss.tape() != this || loss.id() >= nodes_.size()) {
      throw std::invalid_argument("backward: loss is not recorded on this tape");
    }
    if (nodes_[loss.id()].value.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_str(nodes_[loss.id()].value.shape()));
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
    }
    if (Tensor<T>* g = grad_buffer(loss)) (*g)[0] = T{1};

    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
      if (!n.is_leaf) {
        n.grad = Tensor<T>();
        n.has_grad = false;
      }
    }

    Gradients<T> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (!n.is_leaf || !n.requires_grad) continue;
      out.emplace(i, n.has_grad ? n.grad : Tensor<T>(n.value.shape(), T{0}));
    }
    return out;
  }

  /// After backward(): whether any gradient flowed into v.
  bool reached(const Var<T>& v) const {
    check_owned(v);
    return nodes_[v.id()].has_grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad;
    bool is_leaf;
    bool has_grad;
    BackwardFn backward;
  };

  void check_owned(const Var<T>& v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw std::invalid_argument("variable is not recorded on this tape");
    }
  }

  Node& node(const Var<T>& v) {
    check_owned(v);
    return nodes_[v.id()];
  }

  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(*this);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(*this);
}

}  // namespace agenet

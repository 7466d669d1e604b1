#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "transrec/nn/matrix.hpp"
#include "transrec/nn/parameters.hpp"

namespace transrec::nn {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  explicit operator bool() const { return tape != nullptr; }
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order and
/// visited in reverse by backward(). A tape built with grad disabled records
/// values only (inference mode).
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(Matrix value);
  /// Leaf that receives a gradient but is not backed by a parameter.
  Var leaf(Matrix value);
  /// Leaf bound to a stored parameter. Gradients are accumulated into
  /// `p.grad` during backward() unless `frozen` or `!p.trainable`.
  Var parameter(Parameter& p, bool frozen = false);

  /// Appends an op result. `backward` is kept only when some input needs a
  /// gradient; it reads grad(result) and accumulates into input grads.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Matrix value, const std::vector<Var>& inputs, BackwardFn backward);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient buffer of `v`, allocated (zeroed) on first access.
  Matrix& grad(Var v);
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace transrec::nn

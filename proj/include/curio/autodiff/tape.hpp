#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "curio/autodiff/tensor.hpp"

namespace curio {

/// A named array owned by a model. `grad` accumulates across backward passes
/// until the optimizer consumes it; call `zero_grad()` between updates.
/// Buffers such as batch-norm running statistics are stored the same way
/// with `trainable` false.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() {
    if (grad.size() != value.size()) grad = Tensor::zeros_like(value);
    grad.fill(0.0);
  }
};

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
/// that issued it is alive and has not been cleared.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const noexcept { return *tape_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a backward function sees: the incoming gradient of its output and
/// lazily-zeroed accumulators for every input that requires a gradient.
class BackwardContext {
 public:
  const Tensor& grad_out() const { return grad_out_; }
  const Tensor& output() const;
  const Tensor& input(std::size_t i) const;
  bool needs_grad(std::size_t i) const;
  Tensor& grad(std::size_t i);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t node, const Tensor& grad_out)
      : tape_(tape), node_(node), grad_out_(grad_out) {}

  Tape& tape_;
  std::size_t node_;
  const Tensor& grad_out_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Define-by-run record of operations. Nodes are appended in evaluation
/// order, so inputs always precede their consumers and `backward` walks the
/// vector in reverse.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(Tensor value);
  /// Leaf whose gradient can be read back with `grad()` after `backward`.
  Var variable(Tensor value);
  /// Leaf bound to a parameter; `backward` adds into `param.grad`.
  Var parameter(Parameter& param);

  /// Appends an operation result. `fn` is dropped when no input requires a
  /// gradient. Throws NumericError if `value` has a non-finite element.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs,
             BackwardFn fn);

  /// Reverse sweep from a single-element root.
  void backward(Var root);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  /// Gradient accumulated at `v` by the last backward; zeros if none reached.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  friend class BackwardContext;

  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);
  Tensor& grad_slot(std::size_t id);

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace curio

#include "curio/autodiff/tape.hpp"

#include "curio/errors.hpp"

namespace curio {

const Tensor& Var::value() const { return tape_->value(*this); }

const Tensor& BackwardContext::output() const {
  return tape_.nodes_[node_].value;
}

const Tensor& BackwardContext::input(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].value;
}

bool BackwardContext::needs_grad(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].requires_grad;
}

Tensor& BackwardContext::grad(std::size_t i) {
  return tape_.grad_slot(tape_.nodes_[node_].inputs.at(i));
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  return push(std::move(node));
}

Var Tape::variable(Tensor value) {
  Node node;
  node.op = "variable";
  node.value = std::move(value);
  node.requires_grad = grad_enabled_;
  return push(std::move(node));
}

Var Tape::parameter(Parameter& param) {
  Node node;
  node.op = "parameter";
  node.value = param.value;
  node.requires_grad = grad_enabled_;
  node.param = grad_enabled_ ? &param : nullptr;
  return push(std::move(node));
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs,
                 BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value");
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.tape() != this) {
      throw Error(std::string(op) + ": input recorded on a different tape");
    }
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(fn);
  return push(std::move(node));
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.size() != node.value.size()) {
    node.grad = Tensor::zeros_like(node.value);
  }
  return node.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id());
  if (node.grad.size() != node.value.size()) {
    return Tensor::zeros_like(node.value);
  }
  return node.grad;
}

void Tape::backward(Var root) {
  if (root.value().size() != 1) {
    throw NotScalar("backward from root of shape " +
                    shape_string(root.shape()));
  }
  for (Node& node : nodes_) node.grad = Tensor();
  grad_slot(root.id()).fill(1.0);

  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.param != nullptr) {
      Parameter& p = *node.param;
      if (p.grad.size() != p.value.size()) p.grad = Tensor::zeros_like(p.value);
      p.grad.axpy(1.0, node.grad);
    }
    if (node.backward) {
      // The context refers to node.grad by reference; nothing appends to
      // nodes_ during the sweep, so the reference stays valid.
      BackwardContext ctx(*this, i, node.grad);
      node.backward(ctx);
    }
  }
}

}  // namespace curio

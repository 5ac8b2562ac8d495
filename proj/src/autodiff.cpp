#include "dasmil/autodiff.hpp"

#include "dasmil/errors.hpp"

namespace dasmil {

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, {}, {}, false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, {}, {}, true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, Tensor{}, {}, {}, true, &p});
  const NodeId id = nodes_.size() - 1;
  bound_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw PreconditionError("operation mixes variables from different tapes");
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw PreconditionError("loss belongs to a different tape");
  if (loss.value().size() != 1)
    throw DimensionError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));

  for (Node& n : nodes_) {
    if (n.requires_grad)
      n.grad = Tensor(n.value.shape(), 0.0);
    else
      n.grad = Tensor{};
  }
  nodes_[loss.id()].grad.fill(1.0);

  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> input_grads;
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.requires_grad || !n.backward) continue;
    inputs.clear();
    input_grads.clear();
    for (NodeId in : n.inputs) {
      inputs.push_back(&nodes_[in].value);
      input_grads.push_back(nodes_[in].requires_grad ? &nodes_[in].grad : nullptr);
    }
    n.backward(BackwardContext{n.grad, n.value, inputs, input_grads});
  }

  for (const Node& n : nodes_)
    if (n.param) n.param->grad = n.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (!n.requires_grad) throw PreconditionError("variable does not track gradients");
  return n.grad;
}

}  // namespace dasmil

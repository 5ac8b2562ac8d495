#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dasmil/tensor.hpp"

namespace dasmil {

/// Trainable tensor with a stable name such as "dasatt.WQ".
///
/// `grad` is overwritten by every Tape::backward that the parameter took part
/// in. A frozen parameter still receives a gradient but optimizers skip it.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_, bool trainable_ = true)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), trainable(trainable_) {}
};

using ParameterList = std::vector<Parameter*>;

class Tape;

using NodeId = std::size_t;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Arguments handed to a backward rule. `input_grads[k]` is null when input k
/// does not need a gradient; otherwise the rule accumulates into it.
struct BackwardContext {
  const Tensor& out_grad;
  const Tensor& out_value;
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Records operations in execution order (which is therefore topological) and
/// replays them in reverse. One tape serves one forward/backward pair.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);

  /// Binds a parameter; binding the same parameter twice returns the same node.
  Var param(Parameter& p);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss. Every bound parameter has its grad
  /// overwritten, with zeros when the loss does not depend on it.
  void backward(Var loss);

  const Tensor& grad(Var v) const;
  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> bound_;
};

}  // namespace dasmil

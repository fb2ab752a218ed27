#include "mixloc/graph.hpp"

#include <optional>
#include <stdexcept>

namespace mixloc::ad {

const Array& Var::value() const { return graph->value(id); }
const std::vector<std::size_t>& Var::shape() const { return graph->value(id).shape(); }

const Array& GradientMap::at(std::size_t id) const {
  for (const auto& [pid, grad] : entries_) {
    if (pid == id) return grad;
  }
  throw std::out_of_range("GradientMap: node " + std::to_string(id) + " is not a parameter");
}

Var Graph::parameter(Array value) {
  nodes_.push_back(Node{std::move(value), NodeKind::Parameter, "parameter", {}, {}, {}});
  params_.push_back(nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Array value) {
  nodes_.push_back(Node{std::move(value), NodeKind::Constant, "constant", {}, {}, {}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::derived(std::string op, std::vector<std::size_t> inputs, ForwardFn forward,
                   BackwardFn backward) {
  std::vector<const Array*> in;
  in.reserve(inputs.size());
  for (std::size_t id : inputs) {
    if (id >= nodes_.size()) throw std::invalid_argument(op + ": input node out of range");
    in.push_back(&nodes_[id].value);
  }
  Array value = forward(in);
  nodes_.push_back(Node{std::move(value), NodeKind::Derived, std::move(op), std::move(inputs),
                        std::move(forward), std::move(backward)});
  return Var{this, nodes_.size() - 1};
}

Array Graph::recompute(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.kind != NodeKind::Derived) return n.value;
  std::vector<const Array*> in;
  in.reserve(n.inputs.size());
  for (std::size_t i : n.inputs) in.push_back(&nodes_[i].value);
  return n.forward(in);
}

GradientMap Graph::backward(const Var& loss) const {
  if (loss.graph != this) throw std::invalid_argument("backward: loss belongs to another graph");
  const Array& lv = nodes_[loss.id].value;
  if (lv.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(lv.shape()));
  }

  std::vector<std::optional<Array>> adjoint(nodes_.size());
  adjoint[loss.id] = Array::full(lv.shape(), 1.0);

  // Ids are topologically ordered, so one reverse pass visits every node
  // after all of its consumers.
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (!adjoint[id].has_value()) continue;
    const Node& n = nodes_[id];
    if (n.kind != NodeKind::Derived) continue;

    std::vector<const Array*> in;
    std::vector<Array*> in_adj;
    in.reserve(n.inputs.size());
    in_adj.reserve(n.inputs.size());
    for (std::size_t i : n.inputs) {
      in.push_back(&nodes_[i].value);
      if (!adjoint[i].has_value()) adjoint[i] = Array::zeros(nodes_[i].value.shape());
      in_adj.push_back(&*adjoint[i]);
    }
    n.back(n.value, *adjoint[id], in, in_adj);
  }

  GradientMap out;
  out.entries_.reserve(params_.size());
  for (std::size_t pid : params_) {
    if (adjoint[pid].has_value()) {
      out.entries_.emplace_back(pid, std::move(*adjoint[pid]));
    } else {
      out.entries_.emplace_back(pid, Array::zeros(nodes_[pid].value.shape()));
    }
  }
  return out;
}

}  // namespace mixloc::ad

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mixloc/array.hpp"

namespace mixloc::ad {

enum class NodeKind { Parameter, Constant, Derived };

class Graph;

// Lightweight handle into a Graph. Copyable; valid for the graph's lifetime.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Array& value() const;
  const std::vector<std::size_t>& shape() const;
};

// Gradients of one scalar loss with respect to every leaf parameter of the
// graph, in parameter insertion order. Parameters the loss never touches map
// to zero arrays of the matching shape.
class GradientMap {
 public:
  const Array& at(const Var& param) const { return at(param.id); }
  const Array& at(std::size_t id) const;
  std::size_t size() const { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  friend class Graph;
  std::vector<std::pair<std::size_t, Array>> entries_;
};

// Append-only computation tape. Node ids are already a topological order, so
// reverse-mode differentiation is a single backward sweep. A graph is built
// and consumed by one thread; independent graphs are independent.
class Graph {
 public:
  using ForwardFn = std::function<Array(std::span<const Array* const>)>;
  using BackwardFn = std::function<void(const Array& value, const Array& adjoint,
                                        std::span<const Array* const> inputs,
                                        std::span<Array* const> input_adjoints)>;

  Var parameter(Array value);
  Var constant(Array value);
  Var derived(std::string op, std::vector<std::size_t> inputs, ForwardFn forward,
              BackwardFn backward);

  const Array& value(std::size_t id) const { return nodes_[id].value; }
  NodeKind kind(std::size_t id) const { return nodes_[id].kind; }
  const std::string& op_name(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::size_t>& parameters() const { return params_; }

  // Re-applies a derived node's operation to its stored input values.
  Array recompute(std::size_t id) const;

  GradientMap backward(const Var& loss) const;

 private:
  struct Node {
    Array value;
    NodeKind kind;
    std::string op;
    std::vector<std::size_t> inputs;
    ForwardFn forward;
    BackwardFn back;
  };
  std::vector<Node> nodes_;
  std::vector<std::size_t> params_;
};

}  // namespace mixloc::ad

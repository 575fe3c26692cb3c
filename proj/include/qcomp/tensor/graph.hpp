#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "qcomp/tensor/tensor.hpp"

namespace qcomp {

class Graph;

/// Handle to a node of a recording graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Append-only tape of operations. Parents always precede children, so the
/// reverse of insertion order is a valid topological order for backward.
///
/// One graph belongs to one thread; distinct graphs share nothing.
class Graph {
 public:
  /// Propagates this node's gradient into its parents' gradient buffers.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient on backward.
  Var variable(Tensor value);

  /// Records an interior node. The node requires a gradient iff any parent does;
  /// `fn` is dropped otherwise.
  Var record(std::string_view tag, Tensor value, std::span<const Var> parents, BackwardFn fn);
  Var record(std::string_view tag, Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(tag, std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::string_view tag(std::size_t id) const { return nodes_[id].tag; }
  std::span<const std::size_t> parents(std::size_t id) const { return nodes_[id].parents; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward target w.r.t. `v`; zeros when unreachable.
  Tensor grad(Var v) const;

  /// Zero-initialised gradient buffer of a node, allocated on first use.
  /// Only valid during backward, from inside a BackwardFn.
  Tensor& grad_buffer(std::size_t id);
  /// Adds `g` into the gradient buffer of `id` when that node requires a gradient.
  void accumulate(std::size_t id, const Tensor& g);
  /// Gradient flowing into node `self` (valid inside its BackwardFn).
  const Tensor& upstream(std::size_t self) const { return nodes_[self].grad; }

  /// Reverse-mode sweep from a single-element `loss`. Throws ContractError for
  /// any other shape.
  void backward(Var loss);

 private:
  struct Node {
    std::string_view tag;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Var push(Node node);

  // Deque: references to node values stay valid while recording continues.
  std::deque<Node> nodes_;
};

}  // namespace qcomp

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bonenet/tensor.hpp"

namespace bonenet {

/// A named, persistent tensor owned by a model. Buffers (batch-norm running
/// statistics) are serialized alongside weights but never optimized.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
  bool buffer = false;
};

using NodeId = std::size_t;

class Graph;

struct BackwardArgs {
  const Graph& graph;
  std::span<const NodeId> inputs;
  const Tensor& output;
  const Tensor& grad_output;
  /// One slot per input; null when that input does not require a gradient.
  std::span<Tensor* const> grad_inputs;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

/// Define-by-run tape. Nodes are appended in execution order, so the node
/// vector is always a valid topological order.
class Graph {
 public:
  /// Constant (requires_grad = false) or free leaf.
  NodeId input(Tensor value, bool requires_grad = false);
  /// Leaf bound to a model parameter; requires grad iff the parameter is
  /// trainable.
  NodeId param(Parameter& p);

  NodeId record(Tensor value, std::vector<NodeId> inputs, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  const Shape& shape(NodeId id) const { return nodes_.at(id).value.shape(); }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  bool is_leaf(NodeId id) const { return nodes_.at(id).leaf; }
  Parameter* source(NodeId id) const { return nodes_.at(id).source; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradients of a scalar node with respect to every node that requires
  /// grad. Entries for nodes that need no gradient are empty tensors.
  std::vector<Tensor> backward_all(NodeId loss) const;

  /// Gradients for every grad-requiring leaf; leaves the loss does not
  /// reach get zeros.
  std::map<NodeId, Tensor> backward(NodeId loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
    Parameter* source = nullptr;
  };
  std::vector<Node> nodes_;
};

namespace ops {

NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId add_scalar(Graph& g, NodeId a, double c);
NodeId mul_scalar(Graph& g, NodeId a, double c);
/// max(x, 0); subgradient 0 at x == 0.
NodeId relu(Graph& g, NodeId a);
/// |x|; subgradient 0 at x == 0.
NodeId abs(Graph& g, NodeId a);
NodeId square(Graph& g, NodeId a);

NodeId matmul(Graph& g, NodeId a, NodeId b);
NodeId reshape(Graph& g, NodeId a, Shape shape);
NodeId concat(Graph& g, std::span<const NodeId> parts, std::size_t axis);
NodeId reduce_mean(Graph& g, NodeId a);

}  // namespace ops

}  // namespace bonenet

#include "bonenet/autograd.hpp"

#include <cmath>

#include "bonenet/error.hpp"
#include "kernels.hpp"

namespace bonenet {

NodeId Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = p.trainable && !p.buffer;
  n.leaf = true;
  n.source = &p;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::record(Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw Error(ErrorCode::InvalidShape, "input node does not exist");
    n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

std::vector<Tensor> Graph::backward_all(NodeId loss) const {
  const Node& root = nodes_.at(loss);
  if (root.value.size() != 1)
    throw Error(ErrorCode::NotScalar, "loss has shape " + shape_str(root.value.shape()));
  std::vector<Tensor> grads(nodes_.size());
  if (!root.requires_grad) return grads;
  grads[loss] = Tensor(root.value.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (NodeId id = loss + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.leaf || !n.backward || grads[id].empty()) continue;
    slots.assign(n.inputs.size(), nullptr);
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      NodeId in = n.inputs[i];
      if (!nodes_[in].requires_grad) continue;
      if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
      slots[i] = &grads[in];
    }
    n.backward(BackwardArgs{*this, n.inputs, n.value, grads[id], slots});
  }
  return grads;
}

std::map<NodeId, Tensor> Graph::backward(NodeId loss) const {
  auto all = backward_all(loss);
  std::map<NodeId, Tensor> out;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.leaf || !n.requires_grad) continue;
    out.emplace(id, all[id].empty() ? Tensor(n.value.shape(), 0.0) : std::move(all[id]));
  }
  return out;
}

namespace ops {

namespace {

void require_same_shape(const Graph& g, NodeId a, NodeId b, const char* op) {
  if (g.shape(a) != g.shape(b))
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + shape_str(g.shape(a)) + " vs " + shape_str(g.shape(b)));
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

NodeId add(Graph& g, NodeId a, NodeId b) {
  require_same_shape(g, a, b, "add");
  return g.record(map_binary(g.value(a), g.value(b), [](double x, double y) { return x + y; }), {a, b},
                  [](const BackwardArgs& args) {
                    for (auto* slot : args.grad_inputs)
                      if (slot) slot->add_(args.grad_output);
                  });
}

NodeId sub(Graph& g, NodeId a, NodeId b) {
  require_same_shape(g, a, b, "sub");
  return g.record(map_binary(g.value(a), g.value(b), [](double x, double y) { return x - y; }), {a, b},
                  [](const BackwardArgs& args) {
                    const Tensor& go = args.grad_output;
                    if (auto* ga = args.grad_inputs[0]) ga->add_(go);
                    if (auto* gb = args.grad_inputs[1])
                      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] -= go[i];
                  });
}

NodeId mul(Graph& g, NodeId a, NodeId b) {
  require_same_shape(g, a, b, "mul");
  return g.record(map_binary(g.value(a), g.value(b), [](double x, double y) { return x * y; }), {a, b},
                  [](const BackwardArgs& args) {
                    const Tensor& go = args.grad_output;
                    const Tensor& va = args.graph.value(args.inputs[0]);
                    const Tensor& vb = args.graph.value(args.inputs[1]);
                    if (auto* ga = args.grad_inputs[0])
                      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * vb[i];
                    if (auto* gb = args.grad_inputs[1])
                      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i] * va[i];
                  });
}

NodeId add_scalar(Graph& g, NodeId a, double c) {
  return g.record(map_unary(g.value(a), [c](double x) { return x + c; }), {a},
                  [](const BackwardArgs& args) { args.grad_inputs[0]->add_(args.grad_output); });
}

NodeId mul_scalar(Graph& g, NodeId a, double c) {
  return g.record(map_unary(g.value(a), [c](double x) { return x * c; }), {a},
                  [c](const BackwardArgs& args) {
                    const Tensor& go = args.grad_output;
                    Tensor& ga = *args.grad_inputs[0];
                    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
                  });
}

NodeId relu(Graph& g, NodeId a) {
  return g.record(map_unary(g.value(a), [](double x) { return x > 0.0 ? x : 0.0; }), {a},
                  [](const BackwardArgs& args) {
                    const Tensor& go = args.grad_output;
                    const Tensor& x = args.graph.value(args.inputs[0]);
                    Tensor& ga = *args.grad_inputs[0];
                    for (std::size_t i = 0; i < go.size(); ++i)
                      if (x[i] > 0.0) ga[i] += go[i];
                  });
}

NodeId abs(Graph& g, NodeId a) {
  return g.record(map_unary(g.value(a), [](double x) { return std::fabs(x); }), {a},
                  [](const BackwardArgs& args) {
                    const Tensor& go = args.grad_output;
                    const Tensor& x = args.graph.value(args.inputs[0]);
                    Tensor& ga = *args.grad_inputs[0];
                    for (std::size_t i = 0; i < go.size(); ++i) {
                      if (x[i] > 0.0) ga[i] += go[i];
                      else if (x[i] < 0.0) ga[i] -= go[i];
                    }
                  });
}

NodeId square(Graph& g, NodeId a) {
  return g.record(map_unary(g.value(a), [](double x) { return x * x; }), {a},
                  [](const BackwardArgs& args) {
                    const Tensor& go = args.grad_output;
                    const Tensor& x = args.graph.value(args.inputs[0]);
                    Tensor& ga = *args.grad_inputs[0];
                    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += 2.0 * x[i] * go[i];
                  });
}

NodeId matmul(Graph& g, NodeId a, NodeId b) {
  const Shape& sa = g.shape(a);
  const Shape& sb = g.shape(b);
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw Error(ErrorCode::ShapeMismatch, "matmul: " + shape_str(sa) + " x " + shape_str(sb));
  const std::size_t M = sa[0], K = sa[1], N = sb[1];
  Tensor out({M, N});
  kernels::gemm_nn(M, N, K, g.value(a).ptr(), g.value(b).ptr(), out.ptr());
  return g.record(std::move(out), {a, b}, [M, K, N](const BackwardArgs& args) {
    const Tensor& go = args.grad_output;
    const Tensor& va = args.graph.value(args.inputs[0]);
    const Tensor& vb = args.graph.value(args.inputs[1]);
    // dA = dC B^T, dB = A^T dC
    if (auto* ga = args.grad_inputs[0]) kernels::gemm_nt(M, K, N, go.ptr(), vb.ptr(), ga->ptr());
    if (auto* gb = args.grad_inputs[1]) kernels::gemm_tn(K, N, M, va.ptr(), go.ptr(), gb->ptr());
  });
}

NodeId reshape(Graph& g, NodeId a, Shape shape) {
  return g.record(g.value(a).reshaped(std::move(shape)), {a}, [](const BackwardArgs& args) {
    Tensor& ga = *args.grad_inputs[0];
    const Tensor& go = args.grad_output;
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
}

NodeId concat(Graph& g, std::span<const NodeId> parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  const Shape& first = g.shape(parts[0]);
  if (axis >= first.size()) throw Error(ErrorCode::ShapeMismatch, "concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (auto id : parts) {
    const Shape& s = g.shape(id);
    if (s.size() != first.size()) throw Error(ErrorCode::ShapeMismatch, "concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d])
        throw Error(ErrorCode::ShapeMismatch,
                    "concat: " + shape_str(s) + " vs " + shape_str(first) + " off axis " + std::to_string(axis));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  Tensor out(out_shape);
  const std::size_t out_row = out_shape[axis] * inner;
  std::size_t offset = 0;
  for (auto id : parts) {
    const Tensor& v = g.value(id);
    const std::size_t row = v.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.ptr() + o * row, row, out.ptr() + o * out_row + offset);
    offset += row;
  }
  return g.record(std::move(out), std::vector<NodeId>(parts.begin(), parts.end()),
                  [axis, outer, inner, out_row](const BackwardArgs& args) {
                    std::size_t offset = 0;
                    for (std::size_t p = 0; p < args.inputs.size(); ++p) {
                      const std::size_t row = args.graph.shape(args.inputs[p])[axis] * inner;
                      if (auto* gp = args.grad_inputs[p])
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t j = 0; j < row; ++j)
                            (*gp)[o * row + j] += args.grad_output[o * out_row + offset + j];
                      offset += row;
                    }
                  });
}

NodeId reduce_mean(Graph& g, NodeId a) {
  const Tensor& v = g.value(a);
  double s = 0.0;
  for (double x : v.data()) s += x;
  const double n = static_cast<double>(v.size());
  return g.record(Tensor::scalar(s / n), {a}, [n](const BackwardArgs& args) {
    const double share = args.grad_output[0] / n;
    for (auto& x : args.grad_inputs[0]->data()) x += share;
  });
}

}  // namespace ops

}  // namespace bonenet

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ipdfer/tensor.hpp"

namespace ipdfer {

/// A learnable tensor owned by a network. Gradients accumulate into `grad`
/// when a Graph::backward pass reaches the corresponding leaf.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

using NodeId = std::int32_t;

/// Reverse-mode autodiff tape. Values are computed eagerly as ops are built;
/// backward() sweeps the tape once and accumulates into Parameter::grad.
///
/// Gradients are only propagated along paths that reach a trainable leaf, so
/// frozen networks cost a forward pass but no weight-gradient work.
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Constant input (no gradient).
  NodeId input(Tensor t);
  /// Leaf bound to a parameter; participates in backward iff p.trainable.
  NodeId param(Parameter& p);

  const Tensor& value(NodeId id) const;
  /// Gradient of the last backward() root w.r.t. this node. Zero tensor if
  /// the node was not reached.
  Tensor grad_of(NodeId id) const;
  bool requires_grad(NodeId id) const;

  // Elementwise / shape ops.
  NodeId add(NodeId a, NodeId b);
  /// Order-independent three-way sum: per component the addends are sorted
  /// before summation, so any argument permutation gives bit-equal results.
  NodeId add3_commutative(NodeId a, NodeId b, NodeId c);
  NodeId leaky_relu(NodeId x, double alpha);
  NodeId relu(NodeId x) { return leaky_relu(x, 0.0); }
  NodeId sigmoid(NodeId x);
  NodeId reshape(NodeId x, std::vector<int> dims);

  // Network layers.
  NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
  NodeId conv_transpose2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
  NodeId linear(NodeId x, NodeId w, NodeId b);
  NodeId instance_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);
  NodeId global_avg_pool(NodeId x);

  // Reductions to scalars (batch means).
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);
  /// Cross entropy against the uniform distribution over all classes:
  /// mean_n [ logsumexp(l_n) - mean_k l_nk ].
  NodeId uniform_cross_entropy(NodeId logits);
  /// Per-sample mean absolute difference, shape (N).
  NodeId l1_per_sample(NodeId a, NodeId b);
  NodeId mean(NodeId v);
  /// (1/N) * sum_n mask[n] * v[n]; mask entries are constants.
  NodeId masked_mean(NodeId v, std::vector<double> mask);
  /// mean_n |a_n . b_n| / (|a_n| |b_n| + eps) over rows of (N,d) inputs.
  NodeId abs_cosine_mean(NodeId a, NodeId b, double eps = 1e-8);
  NodeId weighted_sum(const std::vector<NodeId>& scalars, const std::vector<double>& weights);

  /// Reverse sweep from a scalar root; flushes leaf gradients into their
  /// parameters (+=). May be called once per graph.
  void backward(NodeId root);

  std::size_t node_count() const;

 private:
  struct Node;
  struct Impl;
  std::unique_ptr<Impl> impl_;

  Node& node(NodeId id);
  const Node& node(NodeId id) const;
  NodeId push(Tensor value, bool requires_grad, std::function<void(Graph&, NodeId)> back);
  Tensor& grad_buf(NodeId id);
  void accumulate(NodeId id, const Tensor& g);

  friend struct GraphOps;
};

/// Softmax over the last dimension of a (N,K) tensor (plain value helper, no
/// gradient tracking).
Tensor softmax_rows(const Tensor& logits);

/// mean_n |cos(a_n, b_n)| on plain tensors; same epsilon guard as the graph op.
double mean_abs_cosine(const Tensor& a, const Tensor& b, double eps = 1e-8);

}  // namespace ipdfer

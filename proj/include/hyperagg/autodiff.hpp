#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "hyperagg/tensor.hpp"

// Tape-style reverse-mode differentiation over the ops the aggregator and
// its loss need. Nodes are appended in evaluation order, so the creation
// order is a topological order and backward simply walks it in reverse.
namespace hyperagg::ad {

using NodeId = std::size_t;

enum class OpKind {
  Leaf,
  Conv,          // 1×1 or 3×3 (pad 1) on C×H×W, chosen by the weight rank
  Relu,
  Resize,        // bilinear, align-corners=false
  ScaleAdd,      // Σ_i c_i · x_i, c_i = 1 or an entry of a weight node
  Softmax,
  RowNormalize,
  Transpose,     // D×H×W → (H·W)×D
  Matmul,        // s · A · Bᵀ
  CrossEntropy,  // symmetric row/column CE over a similarity matrix
};

const char* to_string(OpKind kind);

struct Node {
  OpKind kind = OpKind::Leaf;
  std::vector<NodeId> inputs;
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  // op attributes
  std::size_t group = 0;                       // Softmax/ScaleAdd mirror group
  double scale = 1.0;                          // Matmul
  std::vector<long> coefficient_index;         // ScaleAdd, -1 → coefficient 1
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // CrossEntropy
};

class Graph {
 public:
  NodeId leaf(Tensor value, bool requires_grad = true);

  NodeId conv(NodeId x, NodeId weight, NodeId bias);
  NodeId relu(NodeId x);
  NodeId resize(NodeId x, std::size_t out_h, std::size_t out_w);
  NodeId add(NodeId a, NodeId b);
  // Σ_k weights[index[k]] · terms[k]. With mirror_group = S the terms are
  // read as an l-major L×S grid and summed exactly like aggregate().
  NodeId weighted_sum(NodeId weights, std::vector<NodeId> terms, std::vector<long> index,
                      std::size_t mirror_group = 0);
  NodeId softmax(NodeId x, std::size_t mirror_group = 0);
  NodeId row_normalize(NodeId x);
  NodeId transpose(NodeId x);
  NodeId matmul(NodeId a, NodeId b, double scale);
  // ½·mean_k[CE(row a_k → b_k) + CE(column b_k → a_k)]; scalar.
  NodeId cross_entropy(NodeId sim, std::vector<std::pair<std::size_t, std::size_t>> pairs);

  const Tensor& value(NodeId id) const { return node(id).value; }
  // Zero-shaped if the node does not require a gradient.
  const Tensor& grad(NodeId id) const { return node(id).grad; }
  const Node& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates; loss must be a scalar node.
  // Gradients accumulate over repeated calls until zero_grad().
  void backward(NodeId loss);
  void zero_grad();

 private:
  NodeId push(Node n);
  Node& mut(NodeId id);
  bool any_requires_grad(const std::vector<NodeId>& inputs) const;

  std::vector<Node> nodes_;
};

}  // namespace hyperagg::ad

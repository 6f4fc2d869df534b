#include "hyperagg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hyperagg/kernels.hpp"

namespace hyperagg::ad {

namespace {

kernels::ConvDims conv_dims(const Tensor& x, const Tensor& weight) {
  kernels::ConvDims dims;
  dims.in_channels = x.dim(0);
  dims.out_channels = weight.dim(0);
  dims.height = x.dim(1);
  dims.width = x.dim(2);
  dims.kernel = weight.rank() == 4 ? weight.dim(2) : 1;
  return dims;
}

void accumulate(Tensor& into, const Tensor& delta) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += delta[i];
}

// log Σ exp over a strided run of n values.
double log_sum_exp(const double* v, std::size_t n, std::size_t stride) {
  double peak = v[0];
  for (std::size_t i = 1; i < n; ++i) peak = std::max(peak, v[i * stride]);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::exp(v[i * stride] - peak);
  return peak + std::log(acc);
}

}  // namespace

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Conv: return "conv";
    case OpKind::Relu: return "relu";
    case OpKind::Resize: return "resize";
    case OpKind::ScaleAdd: return "scale_add";
    case OpKind::Softmax: return "softmax";
    case OpKind::RowNormalize: return "row_normalize";
    case OpKind::Transpose: return "transpose";
    case OpKind::Matmul: return "matmul";
    case OpKind::CrossEntropy: return "cross_entropy";
  }
  return "unknown";
}

const Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) throw Error(ErrorCode::GraphError, "node " + std::to_string(id) + " does not exist");
  return nodes_[id];
}

Node& Graph::mut(NodeId id) {
  if (id >= nodes_.size()) throw Error(ErrorCode::GraphError, "node " + std::to_string(id) + " does not exist");
  return nodes_[id];
}

bool Graph::any_requires_grad(const std::vector<NodeId>& inputs) const {
  return std::any_of(inputs.begin(), inputs.end(), [&](NodeId i) { return node(i).requires_grad; });
}

NodeId Graph::push(Node n) {
  for (NodeId i : n.inputs) {
    if (i >= nodes_.size()) throw Error(ErrorCode::GraphError, "input must precede its consumer");
  }
  n.requires_grad = n.requires_grad || any_requires_grad(n.inputs);
  if (n.requires_grad) n.grad = Tensor(n.value.shape());
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

NodeId Graph::conv(NodeId x, NodeId weight, NodeId bias) {
  const Tensor& xv = node(x).value;
  const Tensor& wv = node(weight).value;
  const Tensor& bv = node(bias).value;
  if (xv.rank() != 3 || (wv.rank() != 2 && wv.rank() != 4) || wv.dim(1) != xv.dim(0) ||
      bv.size() != wv.dim(0)) {
    throw Error(ErrorCode::InvalidShape, "conv operand shapes do not agree");
  }
  const auto dims = conv_dims(xv, wv);
  Node n;
  n.kind = OpKind::Conv;
  n.inputs = {x, weight, bias};
  n.value = Tensor({dims.out_channels, dims.height, dims.width});
  kernels::conv2d_forward(dims, xv.data(), wv.data(), bv.data(), n.value.data());
  return push(std::move(n));
}

NodeId Graph::relu(NodeId x) {
  Node n;
  n.kind = OpKind::Relu;
  n.inputs = {x};
  n.value = node(x).value;
  for (double& v : n.value.values()) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

NodeId Graph::resize(NodeId x, std::size_t out_h, std::size_t out_w) {
  Node n;
  n.kind = OpKind::Resize;
  n.inputs = {x};
  n.value = bilinear_resize(node(x).value, out_h, out_w);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  if (node(a).value.shape() != node(b).value.shape()) {
    throw Error(ErrorCode::InvalidShape, "add operands differ in shape");
  }
  Node n;
  n.kind = OpKind::ScaleAdd;
  n.inputs = {a, b};
  n.coefficient_index = {-1, -1};
  n.value = node(a).value;
  accumulate(n.value, node(b).value);
  return push(std::move(n));
}

NodeId Graph::weighted_sum(NodeId weights, std::vector<NodeId> terms, std::vector<long> index,
                           std::size_t mirror_group) {
  if (terms.empty() || terms.size() != index.size()) {
    throw Error(ErrorCode::InvalidShape, "weighted_sum needs one index per term");
  }
  const Tensor& w = node(weights).value;
  const Tensor::Shape& shape = node(terms[0]).value.shape();
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (node(terms[k]).value.shape() != shape) throw Error(ErrorCode::InvalidShape, "weighted_sum terms differ in shape");
    if (index[k] < 0 || static_cast<std::size_t>(index[k]) >= w.size()) {
      throw Error(ErrorCode::InvalidShape, "weighted_sum index out of range");
    }
  }
  const std::size_t group = mirror_group > 1 ? mirror_group : terms.size();
  if (terms.size() % group != 0) throw Error(ErrorCode::InvalidShape, "weighted_sum group does not divide terms");

  Node n;
  n.kind = OpKind::ScaleAdd;
  n.group = mirror_group;
  n.value = Tensor(shape);
  const std::size_t len = n.value.size();
  auto coef = [&](std::size_t k) { return w[static_cast<std::size_t>(index[k])]; };
  auto term = [&](std::size_t k) -> const Tensor& { return node(terms[k]).value; };
  if (mirror_group > 1) {
    std::vector<double> acc(len);
    for (std::size_t g = 0; g < terms.size(); g += group) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t s = 0; s < group / 2; ++s) {
        const std::size_t ka = g + s, kb = g + group - 1 - s;
        const Tensor& a = term(ka);
        const Tensor& b = term(kb);
        const double wa = coef(ka), wb = coef(kb);
        for (std::size_t i = 0; i < len; ++i) acc[i] += wa * a[i] + wb * b[i];
      }
      if (group % 2 == 1) {
        const std::size_t km = g + group / 2;
        const Tensor& m = term(km);
        const double wm = coef(km);
        for (std::size_t i = 0; i < len; ++i) acc[i] += wm * m[i];
      }
      for (std::size_t i = 0; i < len; ++i) n.value[i] += acc[i];
    }
  } else {
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const Tensor& t = term(k);
      const double c = coef(k);
      for (std::size_t i = 0; i < len; ++i) n.value[i] += c * t[i];
    }
  }
  n.inputs = std::move(terms);
  n.inputs.push_back(weights);
  n.coefficient_index = std::move(index);
  return push(std::move(n));
}

NodeId Graph::softmax(NodeId x, std::size_t mirror_group) {
  Node n;
  n.kind = OpKind::Softmax;
  n.inputs = {x};
  n.group = mirror_group;
  n.value = hyperagg::softmax(node(x).value, mirror_group);
  return push(std::move(n));
}

NodeId Graph::row_normalize(NodeId x) {
  if (node(x).value.rank() != 2) throw Error(ErrorCode::InvalidShape, "row_normalize needs a matrix");
  Node n;
  n.kind = OpKind::RowNormalize;
  n.inputs = {x};
  n.value = l2_normalize_rows(node(x).value);
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId x) {
  Node n;
  n.kind = OpKind::Transpose;
  n.inputs = {x};
  n.value = pixels_as_rows(node(x).value);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b, double scale) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
    throw Error(ErrorCode::InvalidShape, "matmul needs N×D and M×D");
  }
  Node n;
  n.kind = OpKind::Matmul;
  n.inputs = {a, b};
  n.scale = scale;
  n.value = Tensor({av.dim(0), bv.dim(0)});
  kernels::gemm_abt(av.data(), bv.data(), av.dim(0), bv.dim(0), av.dim(1), scale, n.value.data());
  return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId sim, std::vector<std::pair<std::size_t, std::size_t>> pairs) {
  const Tensor& s = node(sim).value;
  if (s.rank() != 2) throw Error(ErrorCode::InvalidShape, "cross_entropy needs a similarity matrix");
  if (pairs.empty()) throw Error(ErrorCode::GraphError, "cross_entropy needs at least one pair");
  const std::size_t rows = s.dim(0), cols = s.dim(1);
  double total = 0.0;
  for (const auto& [a, b] : pairs) {
    if (a >= rows || b >= cols) throw Error(ErrorCode::GraphError, "cross_entropy pair out of range");
    const double target = s.at(a, b);
    const double row_ce = log_sum_exp(s.data() + a * cols, cols, 1) - target;
    const double col_ce = log_sum_exp(s.data() + b, rows, cols) - target;
    total += row_ce + col_ce;
  }
  Node n;
  n.kind = OpKind::CrossEntropy;
  n.inputs = {sim};
  n.pairs = std::move(pairs);
  n.value = Tensor({1}, 0.5 * total / static_cast<double>(n.pairs.size()));
  return push(std::move(n));
}

void Graph::zero_grad() {
  for (Node& n : nodes_) {
    for (double& g : n.grad.values()) g = 0.0;
  }
}

void Graph::backward(NodeId loss) {
  Node& root = mut(loss);
  if (root.value.size() != 1) throw Error(ErrorCode::GraphError, "backward needs a scalar loss node");
  if (!root.requires_grad) throw Error(ErrorCode::GraphError, "loss does not depend on any parameter");
  // Interior gradients restart per pass; only leaves accumulate.
  for (NodeId id = 0; id <= loss; ++id) {
    Node& n = nodes_[id];
    if (n.kind != OpKind::Leaf && n.requires_grad) std::fill(n.grad.values().begin(), n.grad.values().end(), 0.0);
  }
  root.grad[0] += 1.0;

  for (NodeId id = loss + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.kind == OpKind::Leaf) continue;
    const Tensor& g = n.grad;
    switch (n.kind) {
      case OpKind::Conv: {
        Node& x = nodes_[n.inputs[0]];
        Node& w = nodes_[n.inputs[1]];
        Node& b = nodes_[n.inputs[2]];
        const auto dims = conv_dims(x.value, w.value);
        if (x.requires_grad) {
          Tensor gx(x.value.shape());
          kernels::conv2d_backward_input(dims, g.data(), w.value.data(), gx.data());
          accumulate(x.grad, gx);
        }
        if (w.requires_grad || b.requires_grad) {
          Tensor gw(w.value.shape()), gb(b.value.shape());
          kernels::conv2d_backward_params(dims, x.value.data(), g.data(), gw.data(), gb.data());
          if (w.requires_grad) accumulate(w.grad, gw);
          if (b.requires_grad) accumulate(b.grad, gb);
        }
        break;
      }
      case OpKind::Relu: {
        Node& x = nodes_[n.inputs[0]];
        if (!x.requires_grad) break;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (x.value[i] > 0.0) x.grad[i] += g[i];
        }
        break;
      }
      case OpKind::Resize: {
        Node& x = nodes_[n.inputs[0]];
        if (!x.requires_grad) break;
        const std::size_t c = x.value.dim(0), ih = x.value.dim(1), iw = x.value.dim(2);
        const std::size_t oh = n.value.dim(1), ow = n.value.dim(2);
        if (ih == oh && iw == ow) {
          accumulate(x.grad, g);
        } else {
          kernels::bilinear_resize_adjoint(g.data(), c, ih, iw, x.grad.data(), oh, ow);
        }
        break;
      }
      case OpKind::ScaleAdd: {
        const bool weighted = n.coefficient_index.size() + 1 == n.inputs.size();
        Node* w = weighted ? &nodes_[n.inputs.back()] : nullptr;
        for (std::size_t k = 0; k < n.coefficient_index.size(); ++k) {
          Node& t = nodes_[n.inputs[k]];
          const long ci = n.coefficient_index[k];
          const double c = ci < 0 ? 1.0 : w->value[static_cast<std::size_t>(ci)];
          if (t.requires_grad) {
            for (std::size_t i = 0; i < g.size(); ++i) t.grad[i] += c * g[i];
          }
          if (ci >= 0 && w->requires_grad) {
            double dot = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * t.value[i];
            w->grad[static_cast<std::size_t>(ci)] += dot;
          }
        }
        break;
      }
      case OpKind::Softmax: {
        Node& x = nodes_[n.inputs[0]];
        if (!x.requires_grad) break;
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * n.value[i];
        for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] += n.value[i] * (g[i] - dot);
        break;
      }
      case OpKind::RowNormalize: {
        Node& x = nodes_[n.inputs[0]];
        if (!x.requires_grad) break;
        const std::size_t rows = x.value.dim(0), d = x.value.dim(1);
        for (std::size_t r = 0; r < rows; ++r) {
          double sq = 0.0, dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) {
            sq += x.value.at(r, k) * x.value.at(r, k);
            dot += g.at(r, k) * n.value.at(r, k);
          }
          if (sq == 0.0) continue;  // zero rows stay zero; treat as locally constant
          const double inv = 1.0 / std::sqrt(sq);
          for (std::size_t k = 0; k < d; ++k) {
            x.grad.at(r, k) += (g.at(r, k) - n.value.at(r, k) * dot) * inv;
          }
        }
        break;
      }
      case OpKind::Transpose: {
        Node& x = nodes_[n.inputs[0]];
        if (!x.requires_grad) break;
        const std::size_t d = x.value.dim(0), m = x.value.dim(1) * x.value.dim(2);
        for (std::size_t c = 0; c < d; ++c) {
          for (std::size_t p = 0; p < m; ++p) x.grad[c * m + p] += g[p * d + c];
        }
        break;
      }
      case OpKind::Matmul: {
        Node& a = nodes_[n.inputs[0]];
        Node& b = nodes_[n.inputs[1]];
        const std::size_t rows = a.value.dim(0), cols = b.value.dim(0), d = a.value.dim(1);
        if (a.requires_grad) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              const double gij = n.scale * g.at(i, j);
              if (gij == 0.0) continue;
              for (std::size_t k = 0; k < d; ++k) a.grad.at(i, k) += gij * b.value.at(j, k);
            }
          }
        }
        if (b.requires_grad) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              const double gij = n.scale * g.at(i, j);
              if (gij == 0.0) continue;
              for (std::size_t k = 0; k < d; ++k) b.grad.at(j, k) += gij * a.value.at(i, k);
            }
          }
        }
        break;
      }
      case OpKind::CrossEntropy: {
        Node& s = nodes_[n.inputs[0]];
        if (!s.requires_grad) break;
        const std::size_t rows = s.value.dim(0), cols = s.value.dim(1);
        const double unit = 0.5 * g[0] / static_cast<double>(n.pairs.size());
        for (const auto& [a, b] : n.pairs) {
          const double row_lse = log_sum_exp(s.value.data() + a * cols, cols, 1);
          for (std::size_t j = 0; j < cols; ++j) s.grad.at(a, j) += unit * std::exp(s.value.at(a, j) - row_lse);
          const double col_lse = log_sum_exp(s.value.data() + b, rows, cols);
          for (std::size_t i = 0; i < rows; ++i) s.grad.at(i, b) += unit * std::exp(s.value.at(i, b) - col_lse);
          s.grad.at(a, b) -= 2.0 * unit;
        }
        break;
      }
      default:
        throw Error(ErrorCode::GraphError, std::string("no backward rule for ") + to_string(n.kind));
    }
  }
}

}  // namespace hyperagg::ad

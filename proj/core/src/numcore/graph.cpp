#include "mal/numcore/graph.hpp"

#include <algorithm>
#include <cmath>

#include "mal/error.hpp"

namespace mal::numcore {
namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const char* op_name(OpKind op) noexcept {
  switch (op) {
    case OpKind::Param: return "param";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Concat: return "concat";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softmax: return "softmax";
    case OpKind::Embedding: return "embedding";
    case OpKind::StopGradient: return "stop_gradient";
    case OpKind::Scale: return "scale";
    case OpKind::WeightedBce: return "weighted_bce";
    case OpKind::SoftmaxCe: return "softmax_ce";
    case OpKind::Step: return "step";
  }
  return "?";
}

Graph::Graph(ParamStore& store, GraphOptions options) : store_(&store), options_(options) {}

Graph::Graph(const ParamStore& store) : store_(const_cast<ParamStore*>(&store)), read_only_(true) {}

Graph::Node& Graph::node(NodeId id) {
  if (id.index >= nodes_.size()) fail(ErrorKind::Graph, "unknown node " + std::to_string(id.index));
  return nodes_[id.index];
}

const Graph::Node& Graph::node(NodeId id) const {
  if (id.index >= nodes_.size()) fail(ErrorKind::Graph, "unknown node " + std::to_string(id.index));
  return nodes_[id.index];
}

NodeId Graph::push(Node n) {
  if (!n.value().all_finite()) {
    fail(ErrorKind::Numeric, std::string("non-finite value produced by ") + op_name(n.op));
  }
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Graph::value(NodeId id) const { return node(id).value(); }

const Tensor& Graph::grad(NodeId id) const {
  const auto& n = node(id);
  if (n.op == OpKind::Param) return store_->grad(n.param_name);
  return n.grad.size() ? n.grad : empty_;
}

double Graph::scalar(NodeId id) const {
  const auto& v = value(id);
  if (v.size() != 1) fail(ErrorKind::Shape, "expected a scalar, got " + shape_string(v.shape()));
  return v[0];
}

NodeId Graph::param(const std::string& name) {
  Node n{OpKind::Param};
  n.external = &store_->value(name);
  n.param_name = name;
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
  Node n{OpKind::Constant};
  n.owned = std::move(value);
  return push(std::move(n));
}

NodeId Graph::input(const Tensor& value) {
  Node n{OpKind::Constant};
  n.external = &value;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a_id, NodeId b_id) {
  const Tensor& a = value(a_id);
  const Tensor& b = value(b_id);
  if (a.cols() != b.rows()) {
    fail(ErrorKind::Shape, "matmul: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Node out{OpKind::MatMul, {a_id, b_id}};
  out.owned = Tensor::matrix(m, n);
  double* c = out.owned.data();
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  out.requires_grad = node(a_id).requires_grad || node(b_id).requires_grad;
  return push(std::move(out));
}

NodeId Graph::add(NodeId a_id, NodeId b_id) {
  const Tensor& a = value(a_id);
  const Tensor& b = value(b_id);
  Node out{OpKind::Add, {a_id, b_id}};
  out.owned = a;
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < a.size(); ++i) out.owned[i] += b[i];
  } else if (b.rows() == 1 && b.cols() == a.cols() && a.rank() == 2) {
    out.factor = 0.0;  // marks row broadcast
    const std::size_t n = a.cols();
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (std::size_t j = 0; j < n; ++j) out.owned[r * n + j] += b[j];
  } else {
    fail(ErrorKind::Shape, "add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  out.requires_grad = node(a_id).requires_grad || node(b_id).requires_grad;
  return push(std::move(out));
}

NodeId Graph::concat(std::span<const NodeId> parts) {
  if (parts.empty()) fail(ErrorKind::Shape, "concat of zero tensors");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  Node out{OpKind::Concat, {parts.begin(), parts.end()}};
  for (const auto id : parts) {
    const Tensor& t = value(id);
    if (t.rows() != rows) {
      fail(ErrorKind::Shape, "concat: " + shape_string(value(parts[0]).shape()) + " vs " + shape_string(t.shape()));
    }
    cols += t.cols();
    out.requires_grad = out.requires_grad || node(id).requires_grad;
  }
  out.owned = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const auto id : parts) {
    const Tensor& t = value(id);
    const std::size_t w = t.cols();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(t.data() + r * w, w, out.owned.data() + r * cols + offset);
    offset += w;
  }
  return push(std::move(out));
}

NodeId Graph::relu(NodeId x) {
  Node out{OpKind::Relu, {x}};
  out.owned = value(x);
  for (auto& v : out.owned.values()) v = v > 0.0 ? v : 0.0;
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

NodeId Graph::sigmoid(NodeId x) {
  Node out{OpKind::Sigmoid, {x}};
  out.owned = value(x);
  for (auto& v : out.owned.values()) v = stable_sigmoid(v);
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

NodeId Graph::softmax(NodeId x) {
  Node out{OpKind::Softmax, {x}};
  out.owned = value(x);
  const std::size_t n = out.owned.cols();
  for (std::size_t r = 0; r < out.owned.rows(); ++r) {
    double* row = out.owned.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  }
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

NodeId Graph::embedding(NodeId table_id, std::span<const std::uint32_t> ids) {
  const Tensor& table = value(table_id);
  const std::size_t dim = table.cols();
  Node out{OpKind::Embedding, {table_id}};
  out.ids.assign(ids.begin(), ids.end());
  out.owned = Tensor::matrix(ids.size(), dim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= table.rows()) {
      fail(ErrorKind::Index, "embedding id " + std::to_string(ids[r]) + " out of range for table " +
                                 shape_string(table.shape()));
    }
    std::copy_n(table.data() + static_cast<std::size_t>(ids[r]) * dim, dim, out.owned.data() + r * dim);
  }
  out.requires_grad = node(table_id).requires_grad;
  return push(std::move(out));
}

NodeId Graph::stop_gradient(NodeId x) {
  Node out{OpKind::StopGradient, {x}};
  out.owned = value(x);
  return push(std::move(out));
}

NodeId Graph::scale(NodeId x, double factor) {
  Node out{OpKind::Scale, {x}};
  out.owned = value(x);
  for (auto& v : out.owned.values()) v *= factor;
  out.factor = factor;
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

NodeId Graph::step(NodeId x) {
  Node out{OpKind::Step, {x}};
  out.owned = value(x);
  for (auto& v : out.owned.values()) v = v > 0.0 ? 1.0 : 0.0;
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

NodeId Graph::weighted_bce(NodeId logits_id, std::span<const double> labels, std::span<const double> weights) {
  const Tensor& z = value(logits_id);
  if (z.cols() != 1 || z.rows() != labels.size() || labels.size() != weights.size()) {
    fail(ErrorKind::Shape, "weighted_bce: logits " + shape_string(z.shape()) + " with " +
                               std::to_string(labels.size()) + " labels and " + std::to_string(weights.size()) +
                               " weights");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double w = weights[i];
    const double l = labels[i];
    if (!(w > 0.0)) fail(ErrorKind::Domain, "weighted_bce: weight must be positive, got " + std::to_string(w));
    if (!(l >= 0.0 && l <= 1.0)) fail(ErrorKind::Domain, "weighted_bce: label must be in [0,1]");
    const double y = z[i];
    total += w * (std::max(y, 0.0) - y * l + std::log1p(std::exp(-std::abs(y))));
  }
  Node out{OpKind::WeightedBce, {logits_id}};
  out.owned = Tensor::scalar(total);
  out.aux_a.assign(labels.begin(), labels.end());
  out.aux_b.assign(weights.begin(), weights.end());
  out.requires_grad = node(logits_id).requires_grad;
  return push(std::move(out));
}

NodeId Graph::softmax_ce(NodeId logits_id, std::span<const std::uint32_t> classes, std::span<const double> weights) {
  const Tensor& z = value(logits_id);
  const std::size_t c = z.cols();
  if (z.rows() != classes.size() || (!weights.empty() && weights.size() != classes.size())) {
    fail(ErrorKind::Shape, "softmax_ce: logits " + shape_string(z.shape()) + " with " +
                               std::to_string(classes.size()) + " classes");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < classes.size(); ++r) {
    if (classes[r] >= c) {
      fail(ErrorKind::Domain, "softmax_ce: class " + std::to_string(classes[r]) + " outside [0," + std::to_string(c) + ")");
    }
    const double w = weights.empty() ? 1.0 : weights[r];
    if (!(w > 0.0)) fail(ErrorKind::Domain, "softmax_ce: weight must be positive");
    const double* row = z.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    total += w * (mx + std::log(s) - row[classes[r]]);
  }
  Node out{OpKind::SoftmaxCe, {logits_id}};
  out.owned = Tensor::scalar(total);
  out.ids.assign(classes.begin(), classes.end());
  out.aux_b.assign(weights.begin(), weights.end());
  out.requires_grad = node(logits_id).requires_grad;
  return push(std::move(out));
}

Tensor& Graph::grad_buffer(Node& n) {
  if (n.op == OpKind::Param) return store_->grad(n.param_name);
  if (n.grad.size() == 0) n.grad = Tensor(n.value().shape());
  return n.grad;
}

void Graph::backward(NodeId target) {
  const Tensor& t = value(target);
  if (t.size() != 1) fail(ErrorKind::Graph, "backward target must be a scalar, got " + shape_string(t.shape()));
  if (read_only_) fail(ErrorKind::Graph, "backward on a forward-only graph");
  store_->zero_grads();
  for (auto& n : nodes_) n.grad = Tensor();
  Node& root = node(target);
  if (!root.requires_grad) return;
  grad_buffer(root)[0] = 1.0;
  for (std::size_t i = target.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.op == OpKind::Param || n.grad.size() == 0) continue;
    const double sign = options_.corrupt_reverse == n.op ? -1.0 : 1.0;
    reverse(n, sign);
  }
}

void Graph::reverse(Node& n, double sign) {
  const Tensor& g = n.grad;
  auto wants = [&](std::size_t k) -> Node* {
    Node& in = nodes_[n.inputs[k].index];
    return in.requires_grad ? &in : nullptr;
  };
  switch (n.op) {
    case OpKind::Param:
    case OpKind::Constant:
    case OpKind::StopGradient:
      return;
    case OpKind::MatMul: {
      Node* a = wants(0);
      Node* b = wants(1);
      const Tensor& av = nodes_[n.inputs[0].index].value();
      const Tensor& bv = nodes_[n.inputs[1].index].value();
      const std::size_t m = av.rows(), k = av.cols(), cols = bv.cols();
      if (a) {
        double* da = grad_buffer(*a).data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * cols;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = bv.data() + kk * cols;
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += grow[j] * brow[j];
            da[i * k + kk] += sign * s;
          }
        }
      }
      if (b) {
        double* db = grad_buffer(*b).data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * cols;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = sign * av.data()[i * k + kk];
            if (aik == 0.0) continue;
            double* drow = db + kk * cols;
            for (std::size_t j = 0; j < cols; ++j) drow[j] += aik * grow[j];
          }
        }
      }
      return;
    }
    case OpKind::Add: {
      if (Node* a = wants(0)) {
        double* da = grad_buffer(*a).data();
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += sign * g[i];
      }
      if (Node* b = wants(1)) {
        double* db = grad_buffer(*b).data();
        if (n.factor == 0.0) {
          const std::size_t cols = g.cols();
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < cols; ++j) db[j] += sign * g[r * cols + j];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += sign * g[i];
        }
      }
      return;
    }
    case OpKind::Concat: {
      const std::size_t rows = g.rows(), cols = g.cols();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t w = nodes_[n.inputs[k].index].value().cols();
        if (Node* in = wants(k)) {
          double* d = grad_buffer(*in).data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) d[r * w + j] += sign * g[r * cols + offset + j];
        }
        offset += w;
      }
      return;
    }
    case OpKind::Relu: {
      if (Node* x = wants(0)) {
        const Tensor& y = n.value();
        double* d = grad_buffer(*x).data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += y[i] > 0.0 ? sign * g[i] : 0.0;
      }
      return;
    }
    case OpKind::Sigmoid: {
      if (Node* x = wants(0)) {
        const Tensor& y = n.value();
        double* d = grad_buffer(*x).data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += sign * g[i] * y[i] * (1.0 - y[i]);
      }
      return;
    }
    case OpKind::Softmax: {
      if (Node* x = wants(0)) {
        const Tensor& y = n.value();
        const std::size_t cols = y.cols();
        double* d = grad_buffer(*x).data();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
          for (std::size_t j = 0; j < cols; ++j) d[r * cols + j] += sign * y[r * cols + j] * (g[r * cols + j] - dot);
        }
      }
      return;
    }
    case OpKind::Embedding: {
      if (Node* table = wants(0)) {
        const std::size_t dim = g.cols();
        double* d = grad_buffer(*table).data();
        for (std::size_t r = 0; r < n.ids.size(); ++r) {
          double* drow = d + static_cast<std::size_t>(n.ids[r]) * dim;
          for (std::size_t j = 0; j < dim; ++j) drow[j] += sign * g[r * dim + j];
        }
      }
      return;
    }
    case OpKind::Scale: {
      if (Node* x = wants(0)) {
        double* d = grad_buffer(*x).data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += sign * n.factor * g[i];
      }
      return;
    }
    case OpKind::Step: {
      if (wants(0) && g.size()) {
        fail(ErrorKind::Graph, "gradient requested through non-differentiable op 'step'");
      }
      return;
    }
    case OpKind::WeightedBce: {
      if (Node* x = wants(0)) {
        const Tensor& z = nodes_[n.inputs[0].index].value();
        double* d = grad_buffer(*x).data();
        const double up = sign * g[0];
        for (std::size_t i = 0; i < n.aux_a.size(); ++i) d[i] += up * n.aux_b[i] * (stable_sigmoid(z[i]) - n.aux_a[i]);
      }
      return;
    }
    case OpKind::SoftmaxCe: {
      if (Node* x = wants(0)) {
        const Tensor& z = nodes_[n.inputs[0].index].value();
        const std::size_t c = z.cols();
        double* d = grad_buffer(*x).data();
        const double up = sign * g[0];
        for (std::size_t r = 0; r < n.ids.size(); ++r) {
          const double w = n.aux_b.empty() ? 1.0 : n.aux_b[r];
          const double* row = z.data() + r * c;
          const double mx = *std::max_element(row, row + c);
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
          for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(row[j] - mx) / s;
            d[r * c + j] += up * w * (p - (j == n.ids[r] ? 1.0 : 0.0));
          }
        }
      }
      return;
    }
  }
}

}  // namespace mal::numcore

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mal/numcore/param_store.hpp"
#include "mal/numcore/tensor.hpp"

namespace mal::numcore {

enum class OpKind {
  Param,
  Constant,
  MatMul,
  Add,
  Concat,
  Relu,
  Sigmoid,
  Softmax,
  Embedding,
  StopGradient,
  Scale,
  WeightedBce,
  SoftmaxCe,
  Step,
};

const char* op_name(OpKind op) noexcept;

struct NodeId {
  std::uint32_t index = 0;
  bool operator==(const NodeId&) const = default;
};

struct GraphOptions {
  // Test hook: negates the reverse rule of one op kind so gradient checks can
  // be shown to catch a broken backward pass.
  std::optional<OpKind> corrupt_reverse;
};

// Define-by-run tape. Every op evaluates its forward value immediately;
// backward() replays the tape in reverse and accumulates parameter gradients
// into the bound ParamStore. All 2-D values are row-major [rows x cols].
class Graph {
 public:
  explicit Graph(ParamStore& store, GraphOptions options = {});
  // Forward-only graph; backward() throws.
  explicit Graph(const ParamStore& store);

  NodeId param(const std::string& name);
  NodeId constant(Tensor value);
  // Like constant() but borrows `value`, which must outlive the graph.
  NodeId input(const Tensor& value);

  NodeId matmul(NodeId a, NodeId b);
  // Elementwise sum; `b` may also be a [1 x n] row broadcast over a's rows.
  NodeId add(NodeId a, NodeId b);
  NodeId concat(std::span<const NodeId> parts);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  // Row-wise softmax.
  NodeId softmax(NodeId x);
  // Gathers rows of a parameter table.
  NodeId embedding(NodeId table, std::span<const std::uint32_t> ids);
  // Identity forward, zero gradient backward.
  NodeId stop_gradient(NodeId x);
  NodeId scale(NodeId x, double factor);
  // x W + b.
  NodeId linear(NodeId x, NodeId weight, NodeId bias) { return add(matmul(x, weight), bias); }
  // Heaviside step; not differentiable.
  NodeId step(NodeId x);

  // Sum over rows of w * [-l log s(y) - (1-l) log(1 - s(y))]; logits are [B x 1].
  NodeId weighted_bce(NodeId logits, std::span<const double> labels, std::span<const double> weights);
  // Sum over rows of -w log softmax(z)[class]; logits are [B x C]. Empty weights mean 1.
  NodeId softmax_ce(NodeId logits, std::span<const std::uint32_t> classes, std::span<const double> weights = {});

  const Tensor& value(NodeId id) const;
  // Gradient of the last backward() target w.r.t. a node; empty if unreached.
  const Tensor& grad(NodeId id) const;
  double scalar(NodeId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Zeroes the store's gradients, then accumulates d(target)/d(param).
  void backward(NodeId target);

 private:
  struct Node {
    OpKind op;
    std::vector<NodeId> inputs;
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    std::string param_name;
    std::vector<std::uint32_t> ids;
    std::vector<double> aux_a;
    std::vector<double> aux_b;
    double factor = 1.0;

    const Tensor& value() const { return external ? *external : owned; }
  };

  NodeId push(Node node);
  Node& node(NodeId id);
  const Node& node(NodeId id) const;
  void accumulate(NodeId target, const Tensor& delta, double sign);
  Tensor& grad_buffer(Node& n);
  void reverse(Node& n, double sign);

  ParamStore* store_;
  bool read_only_ = false;
  GraphOptions options_;
  std::vector<Node> nodes_;
  Tensor empty_;
};

}  // namespace mal::numcore

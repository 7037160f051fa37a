#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "m2at/tensor.hpp"

namespace m2at {

enum class OpKind : std::uint8_t {
  Leaf,
  Add,       // equal shapes, or second input broadcast: [K] over [n,K], [c] over [n,c,h,w]
  Mul,       // elementwise, equal shapes
  MatMul,    // [n,a] x [a,b]
  Conv2d,    // x [n,ci,h,w], w [co,ci,kh,kw]; zero padding
  Relu,
  MaxPool2d,
  Mean,      // reduce over axes (empty = all)
  Reshape,
  SoftmaxCrossEntropy,  // logits [n,K] (or [K]), dense labels, scalar mean loss
  MarginLoss,           // mean of max_{j != y} z_j - z_y; labels pick y by argmax
};

const char* op_name(OpKind kind);

using NodeId = std::int32_t;

struct OpAttrs {
  int stride = 1;
  int pad = 0;
  int window = 0;
  int pool_stride = 0;  // 0 -> window
  std::vector<std::size_t> axes;
  Shape target_shape;
};

// Append-only tape. Inputs always precede consumers, so the tape order is a
// topological order and backward is a single reverse sweep.
template <typename S>
class GraphT {
 public:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> inputs;
    OpAttrs attrs;
    TensorT<S> value;
    // saved activations, whatever this node's backward needs
    std::vector<std::uint8_t> relu_mask;
    std::vector<std::uint32_t> pool_argmax;   // flat h*w index per output element
    TensorT<S> softmax;                       // probabilities, per row
    std::vector<std::uint32_t> margin_pick;   // per row: true class, runner-up
  };

  NodeId leaf(TensorT<S> value);

  // Generic primitive dispatch; the typed helpers below go through it.
  NodeId apply(OpKind kind, std::span<const NodeId> inputs, OpAttrs attrs = {});

  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId conv2d(NodeId x, NodeId w, int stride, int pad);
  NodeId relu(NodeId a);
  NodeId maxpool2d(NodeId a, int window, int stride = 0);
  NodeId mean(NodeId a, std::vector<std::size_t> axes = {});
  NodeId reshape(NodeId a, Shape target);
  NodeId softmax_cross_entropy(NodeId logits, NodeId labels);
  NodeId margin_loss(NodeId logits, NodeId labels);

  std::size_t size() const { return nodes_.size(); }
  const TensorT<S>& value(NodeId id) const { return node(id).value; }
  const Node& node(NodeId id) const;

  // Mutable access to a leaf's value for finite differencing; call
  // recompute() afterwards to propagate.
  TensorT<S>& leaf_value(NodeId id);
  void recompute();

  struct BackwardOptions {
    bool check_finite = true;
  };

  // Gradients of a scalar output w.r.t. the requested nodes. Nodes the
  // output does not depend on get zero gradients of their value's shape.
  std::unordered_map<NodeId, TensorT<S>> backward(
      NodeId output, std::span<const NodeId> wrt, BackwardOptions opts = {}) const;

 private:
  Node& node_mut(NodeId id);
  void forward_into(Node& n) const;

  std::vector<Node> nodes_;
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

// Central-difference verification of backward, 64-bit only; finite
// differences drown in round-off at 32-bit. Relative error uses a unit
// floor: |a - n| / max(1, |a|, |n|).
struct GradCheckEntry {
  std::string name;
  NodeId id = -1;
};

struct GradCheckReport {
  struct PerParam {
    std::string name;
    NodeId id = -1;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
  };
  std::vector<PerParam> params;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

GradCheckReport grad_check(GraphT<double>& graph, NodeId loss,
                           std::span<const GradCheckEntry> wrt, double tolerance,
                           double step = 1e-5);

}  // namespace m2at

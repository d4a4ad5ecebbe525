#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "saliency_audit/nn/tensor.hpp"

namespace sa::nn {

/// Backward rule for ReLU. `guided` additionally zeroes negative upstream
/// gradients: g_in = g_out * 1[x > 0] * 1[g_out > 0].
enum class ReluMode { standard, guided };

using NodeId = std::size_t;

/// Reverse-mode autodiff tape. Each op evaluates eagerly and records a
/// backward closure; nodes are created in topological order, so backward()
/// walks them in reverse. Closures hold `this`, hence the tape is pinned.
template <typename T>
class Tape {
 public:
  explicit Tape(ReluMode mode = ReluMode::standard) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NodeId leaf(Tensor<T> value, bool requires_grad);

  /// x [N,C,H,W], w [O,C,k,k], b [O] -> [N,O,H',W'] (zero padding).
  NodeId conv2d(NodeId x, NodeId w, NodeId b, std::size_t stride, std::size_t pad);
  NodeId relu(NodeId x);
  /// Non-overlapping k x k max pool, floor mode. Ties route to the first max.
  NodeId maxpool2d(NodeId x, std::size_t k);
  /// [N,C,H,W] -> [N,C], mean over the spatial dims.
  NodeId mean_pool(NodeId x);
  /// [N,C,H,W]: subtracts the mean over H from every (n, c, w) column.
  NodeId center_rows(NodeId x);
  /// [N, ...] -> [N, prod(...)].
  NodeId flatten(NodeId x);
  NodeId reshape(NodeId x, Shape dims);
  /// x [N,I], w [O,I], b [O] -> [N,O].
  NodeId dense(NodeId x, NodeId w, NodeId b);
  /// a [M,K], b [K,N] -> [M,N].
  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  /// (x - shift) * scale with constant scalars.
  NodeId affine(NodeId x, T scale, T shift);
  /// Scalar [1] sum of all elements.
  NodeId sum(NodeId x);
  /// Mean softmax cross-entropy over the batch; logits [N,C] -> [1].
  NodeId softmax_cross_entropy(NodeId logits, std::span<const std::size_t> labels);

  const Tensor<T>& value(NodeId id) const { return nodes_[id].value; }
  /// Gradient accumulated by the last backward(); zero-sized if the node
  /// does not depend on any requires_grad leaf.
  const Tensor<T>& grad(NodeId id) const { return nodes_[id].grad; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  ReluMode relu_mode() const { return mode_; }

  void backward(NodeId root, const Tensor<T>& seed);
  /// Seeds a scalar root with 1.
  void backward(NodeId root);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  NodeId push(Tensor<T> value, bool requires_grad, std::function<void()> backward);
  Tensor<T>& grad_slot(NodeId id);
  const Node& node(NodeId id) const;

  std::vector<Node> nodes_;
  ReluMode mode_;
};

extern template class Tape<float>;
extern template class Tape<double>;

template <typename T>
std::vector<T> softmax(std::span<const T> logits);

}  // namespace sa::nn

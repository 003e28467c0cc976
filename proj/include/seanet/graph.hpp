#pragma once

#include <atomic>
#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#include "seanet/tensor.hpp"

namespace seanet {

/// Reverse-mode tape. Nodes are appended during the forward pass, so inputs
/// always precede outputs and a single reverse sweep visits them in reverse
/// topological order. A graph serves exactly one forward/backward pass and
/// frees its nodes when backward finishes. Confined to one thread.
template <typename Scalar>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const AlignedVec<Scalar>&)>;

  explicit Graph(bool recording = true) : id_(next_id()), recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  bool consumed() const { return consumed_; }
  std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }

  /// Node id of `t` in this graph, registering it as a leaf when it was
  /// produced elsewhere. Leaves with requires_grad receive dLoss/dLeaf in
  /// their tensor gradient buffer after backward().
  std::int64_t track(const Tensor<Scalar>& t) {
    check_open();
    if (t.graph_id() == id_ && t.node_id() >= 0) return t.node_id();
    Node n;
    n.numel = t.numel();
    n.leaf = true;
    n.needs = t.requires_grad();
    n.leaf_tensor = t;
    nodes_.push_back(std::move(n));
    return static_cast<std::int64_t>(nodes_.size()) - 1;
  }

  bool needs_grad(std::int64_t node) const { return nodes_[static_cast<std::size_t>(node)].needs; }

  bool any_needs(std::initializer_list<std::int64_t> ids) const {
    for (auto id : ids) {
      if (needs_grad(id)) return true;
    }
    return false;
  }

  /// Appends an op node and stamps the value tensor with its identity.
  /// `fn` receives the node's output gradient and accumulates into the
  /// inputs via grad_of(); pass nullptr when no input needs gradients.
  Tensor<Scalar> emit(Tensor<Scalar> value, std::vector<std::int64_t> inputs, BackwardFn fn) {
    check_open();
    Node n;
    n.numel = value.numel();
    n.needs = false;
    for (auto id : inputs) n.needs = n.needs || needs_grad(id);
    n.inputs = std::move(inputs);
    if (n.needs) n.fn = std::move(fn);
    nodes_.push_back(std::move(n));
    value.set_stamp(id_, static_cast<std::int64_t>(nodes_.size()) - 1);
    return value;
  }

  /// Gradient buffer of a node, zero-initialized on first touch. Only valid
  /// from inside backward functions.
  AlignedVec<Scalar>& grad_of(std::int64_t node) {
    Node& n = nodes_[static_cast<std::size_t>(node)];
    if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(n.numel), Scalar(0));
    return n.grad;
  }

  /// Seeds dLoss/dLoss = 1 and sweeps the tape in reverse, accumulating
  /// gradients into every requires_grad leaf. The graph is consumed
  /// afterwards; a second call is an error.
  void backward(const Tensor<Scalar>& loss) {
    check_open();
    if (!recording_) throw GraphError("backward on a non-recording graph");
    if (loss.graph_id() != id_ || loss.node_id() < 0) {
      throw GraphError("loss was not produced inside this graph");
    }
    if (loss.numel() != 1) {
      throw GraphError("backward requires a scalar loss, got shape " + loss.shape().str());
    }
    grad_of(loss.node_id())[0] = Scalar(1);
    for (std::int64_t i = static_cast<std::int64_t>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.grad.empty()) {
        if (n.fn) n.fn(*this, n.grad);
        if (n.leaf && n.leaf_tensor.requires_grad()) {
          n.leaf_tensor.accumulate_grad({n.grad.data(), n.grad.size()});
        }
      }
      n.grad.clear();
      n.grad.shrink_to_fit();
      n.fn = nullptr;
    }
    consumed_ = true;
    nodes_.clear();
  }

 private:
  struct Node {
    std::vector<std::int64_t> inputs;
    BackwardFn fn;
    AlignedVec<Scalar> grad;
    std::int64_t numel = 0;
    bool needs = false;
    bool leaf = false;
    Tensor<Scalar> leaf_tensor;
  };

  void check_open() const {
    if (consumed_) throw GraphError("graph already consumed by backward");
  }

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  std::uint64_t id_;
  bool recording_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

}  // namespace seanet

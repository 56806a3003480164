#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metaiqa/tensor.hpp"

namespace metaiqa {

enum class OpKind : std::uint8_t {
  Input,
  Parameter,
  Conv2d,
  MatMul,
  BiasAdd,
  Relu,
  GlobalAvgPool,
  Add,
  Scale,
  Sum,
  Mse,
};

const char* op_name(OpKind kind);

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Define-then-run computation graph with reverse-mode differentiation.
///
/// Nodes are appended in topological order by the builder methods, which also
/// infer output shapes so malformed graphs are rejected at construction.
/// `forward` binds the declared inputs, copies parameter values and evaluates
/// every node; `backward` walks the tape in reverse. Parameters bound through a
/// mutable reference receive their gradient in `Tensor::grad` after backward.
///
/// Layouts: images are [batch, channels, height, width]; conv weights are
/// [out, in, kh, kw]; `matmul` is [m, k] x [k, n]; `bias_add` broadcasts a
/// vector along dimension 1.
template <typename T>
class BasicGraph {
 public:
  using TensorT = BasicTensor<T>;

  NodeId input(std::string name, Shape shape, bool requires_grad = false);
  NodeId parameter(std::string name, const TensorT& value);
  NodeId parameter(std::string name, TensorT& value);

  NodeId conv2d(NodeId x, NodeId weight, Conv2dOptions options = {});
  NodeId matmul(NodeId a, NodeId b);
  NodeId bias_add(NodeId x, NodeId bias);
  NodeId relu(NodeId x);
  NodeId global_avg_pool(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId x, T factor);
  NodeId sum(NodeId x);
  NodeId mse(NodeId prediction, NodeId target);

  /// Inputs are matched positionally against the `input()` declarations.
  const TensorT& forward(std::span<const TensorT> inputs);
  const TensorT& forward(std::initializer_list<TensorT> inputs) {
    return forward(std::span<const TensorT>(inputs.begin(), inputs.size()));
  }
  void backward(NodeId loss);
  void backward() { backward(output()); }

  /// Re-evaluates nodes [first, end) from the values currently stored upstream.
  void replay_from(std::size_t first);

  NodeId output() const;
  std::size_t size() const { return nodes_.size(); }
  bool has_forward() const { return forwarded_; }
  bool has_backward() const { return backwarded_; }

  OpKind kind(NodeId id) const { return node(id).kind; }
  const std::string& name(NodeId id) const { return node(id).name; }
  const Shape& shape(NodeId id) const { return node(id).shape; }
  std::span<const NodeId> operands(NodeId id) const { return node(id).operands; }
  bool needs_grad(NodeId id) const { return node(id).needs_grad; }
  const TensorT& value(NodeId id) const;
  TensorT& mutable_value(NodeId id);
  std::span<const T> gradient(NodeId id) const;

  std::vector<NodeId> parameters() const;
  std::vector<NodeId> inputs() const;

  /// Copy of the graph in another precision. Parameters become owned leaves
  /// holding the current values; gradient sinks and fault injection are dropped.
  template <typename U>
  BasicGraph<U> converted() const;

  /// Test hook: scales every operand gradient produced by ops of `kind`.
  void corrupt_backward(OpKind kind, T factor) {
    corrupt_kind_ = kind;
    corrupt_factor_ = factor;
    corrupted_ = true;
  }

  struct Node {
    OpKind kind = OpKind::Input;
    std::string name;
    std::vector<NodeId> operands;
    Shape shape;
    Conv2dOptions conv;
    T factor = T(1);
    bool requires_grad = false;
    bool needs_grad = false;
    const TensorT* source = nullptr;
    TensorT* sink = nullptr;
    TensorT value;
    std::vector<T> grad;
    std::vector<T> saved;
    std::vector<T> work;
    std::vector<T> aux;
  };

  // Raw node access for graph conversion.
  const std::vector<Node>& nodes() const { return nodes_; }
  static BasicGraph from_nodes(std::vector<Node> nodes);

 private:
  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  NodeId push(Node n);
  void evaluate(Node& n);
  void propagate(std::size_t index);
  std::string describe(NodeId id) const;

  std::vector<Node> nodes_;
  bool forwarded_ = false;
  bool backwarded_ = false;
  bool corrupted_ = false;
  OpKind corrupt_kind_ = OpKind::Input;
  T corrupt_factor_ = T(1);
};

using Graph = BasicGraph<float>;
using Graph64 = BasicGraph<double>;

template <typename T>
template <typename U>
BasicGraph<U> BasicGraph<T>::converted() const {
  std::vector<typename BasicGraph<U>::Node> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) {
    typename BasicGraph<U>::Node c;
    c.kind = n.kind;
    c.name = n.name;
    c.operands = n.operands;
    c.shape = n.shape;
    c.conv = n.conv;
    c.factor = static_cast<U>(n.factor);
    c.requires_grad = n.requires_grad;
    c.needs_grad = n.needs_grad;
    if (!n.value.empty()) c.value = n.value.template cast<U>();
    out.push_back(std::move(c));
  }
  return BasicGraph<U>::from_nodes(std::move(out));
}

extern template class BasicGraph<float>;
extern template class BasicGraph<double>;

}  // namespace metaiqa

#pragma once

// Tape-based reverse-mode automatic differentiation over dense double tensors.
//
// A Graph records every executed op together with a backward closure. Ops run
// eagerly, so values are available immediately; backward() walks the tape in
// reverse insertion order exactly once.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tfd/tensor.hpp"

namespace tfd {

class Graph;

/// Handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> value() const;
  double item() const;
  Tensor tensor() const;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor t);
  /// Leaf bound to `t`. When `t.requires_grad()`, backward() adds dLoss/dt into t.grad().
  /// The graph reads `t` in place, so `t` must outlive the graph and stay unchanged while it is used.
  Var param(Tensor& t);

  /// Appends an op node. `fn` reads this node's gradient and accumulates into its inputs.
  Var record(std::string_view op, Shape shape, Buffer value,
             std::vector<std::size_t> inputs, BackwardFn fn);

  /// Reverse pass from a scalar node. Accumulates into bound parameter tensors.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::span<const double> value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.bound != nullptr ? std::span<const double>(n.bound->storage()) : std::span<const double>(n.value);
  }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  const std::string& op(std::size_t id) const { return nodes_[id].op; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first access.
  std::span<double> grad(std::size_t id);
  /// Gradient of a node after backward(); zeros if nothing flowed into it.
  Tensor grad_of(Var v) const;

 private:
  struct Node {
    std::string op;
    Shape shape;
    Buffer value;
    Buffer grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* bound = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

// ---- linear algebra --------------------------------------------------------

/// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
Var transpose(Var a);

// ---- elementwise -----------------------------------------------------------
// Binary ops accept equal shapes, or one operand of size 1 (scalar broadcast).

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var minimum(Var a, Var b);
Var maximum(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var neg(Var a);
Var relu(Var a);
Var gelu(Var a);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var abs(Var a);
Var square(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }
inline Var operator-(Var a) { return neg(a); }

// ---- reductions / normalization ---------------------------------------------

Var sum(Var a);
Var mean(Var a);
Var softmax(Var x, std::size_t axis);
/// log-softmax over the last axis.
Var log_softmax(Var x);
/// Normalizes over the last axis, then applies gain * xhat + bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// ---- structural ------------------------------------------------------------

Var reshape(Var a, Shape shape);
/// Adds bias[d] to every row of x[..., d].
Var add_bias(Var x, Var bias);
/// Rows along the first axis; repeated indices accumulate gradient.
Var gather_rows(Var x, std::vector<std::size_t> rows);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
/// Concatenates along the first axis; trailing dims must agree.
Var concat_rows(std::span<const Var> parts);
/// x[g*group + j, ...] averaged over j -> [rows/group, ...].
Var pool_rows(Var x, std::size_t group);
/// Element i as a scalar.
Var pick(Var x, std::size_t index);
/// Stacks size-1 nodes into a vector.
Var stack(std::span<const Var> scalars);

// ---- attention -------------------------------------------------------------

/// Scaled dot-product multi-head attention.
///
/// q: [groups*n, D], k and v: [groups*m, D]. Every group of n query rows attends
/// to its own m memory rows; D is split into `heads` slices of width D/heads
/// and scores are scaled by 1/sqrt(D/heads). Returns the concatenated heads
/// [groups*n, D]. When `weights_out` is given it receives the attention
/// probabilities, shape [groups, heads, n, m].
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads, std::size_t groups = 1,
                         Tensor* weights_out = nullptr);

}  // namespace tfd

#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "aman/params.hpp"
#include "aman/rng.hpp"
#include "aman/tensor.hpp"

namespace aman {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its Graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Graph* graph() const { return graph_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of operations in creation order, which is a topological order by
/// construction. backward() walks it in reverse.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  Graph() = default;
  // A no-grad graph records values only; used for inference and decoding.
  explicit Graph(bool no_grad) : no_grad_(no_grad) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Differentiable leaf not tied to a named parameter.
  Var leaf(Tensor value);
  // Binds a named parameter once per graph; repeated calls return the same node.
  Var param(const ModelParams& params, const std::string& name);

  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

  void backward(Var loss);
  void zero_grad();

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient slot, zero-initialized on first access.
  Tensor& grad_slot(std::size_t id);
  Tensor grad(Var v) const;
  // Gradients of every bound parameter (zeros where unreachable).
  Gradients param_grads() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    const Tensor* external = nullptr;  // parameters are referenced, not copied
  };
  bool no_grad_ = false;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  std::vector<std::pair<std::string, std::size_t>> param_order_;
};

// Elementwise ops support equal shapes or a size-1 operand broadcast to the other.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var mul(Var a, Real s);
Var add(Var a, Real s);
Var neg(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);  // DomainError on non-positive input

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, Real s) { return mul(a, s); }
inline Var operator-(Var a) { return neg(a); }

Var matmul(Var a, Var b);   // [m x k] . [k x n]
Var matvec(Var w, Var x);   // [m x k] . [k]
Var outer(Var a, Var b);    // [m] (x) [n] -> [m x n]
Var transpose(Var a);       // rank 2

Var softmax(Var x, std::size_t axis);
Var log_softmax(Var x, std::size_t axis);

Var sum(Var x);   // -> [1]
Var mean(Var x);  // -> [1]
Var row_mean(Var m);  // [r x c] -> [r]
Var reshape(Var x, Shape shape);
Var concat(const std::vector<Var>& parts);  // rank-1 parts
Var slice(Var x, std::size_t start, std::size_t len);  // rank 1
Var row(Var m, std::size_t r);  // [r x c] -> [c]
Var pick(Var x, std::size_t i);  // rank 1 -> [1]
Var scale_rows(Var m, Var v);  // m[r, :] * v[r]
Var tile_rows(Var v, std::size_t n);  // [d] -> [n x d]

// x: [C_in x H x W], w: [C_out x C_in x k x k], b: [C_out].
Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad);

// Inverted dropout: zeroes entries with probability `rate` and rescales the
// survivors by 1/(1-rate). rate == 0 returns x unchanged.
Var dropout(Var x, Real rate, Rng& rng);

// Raw kernel shared with the naive-loop oracle tests.
Tensor matmul_value(const Tensor& a, const Tensor& b);

}  // namespace aman

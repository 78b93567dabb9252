#pragma once

#include <deque>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "prime/tensor.hpp"

namespace prime {

// Raised when a forward operation receives NaN/Inf; training treats it as
// divergence rather than a usage error.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

// Handle to a node on a tape.
struct Value {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

enum class Activation { Sigmoid, Tanh, GeluExact, GeluTanh, Relu };

// Reverse-mode tape. Nodes hold tensor values; each differentiable op
// records a closure that scatters the node's adjoint into its parents.
// One tape per forward/backward pass; single-threaded by contract.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Value leaf(Tensor v, bool requires_grad = false);
  Value constant(Tensor v) { return leaf(std::move(v), false); }
  // Copies the value of `v` onto a fresh non-differentiable leaf.
  Value detach(Value v);

  // y = W x, W [m x n], x [n].
  Value matvec(Value W, Value x);
  // y = W x + b.
  Value matvec_bias(Value W, Value x, Value b);
  // y = W^T v, W [m x n], v [m].
  Value matvec_t(Value W, Value v);
  // C = A B, A [m x k], B [k x n].
  Value matmul(Value A, Value B);
  // C = A B^T, A [m x k], B [n x k].
  Value matmul_nt(Value A, Value B);

  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value add_n(const std::vector<Value>& xs);
  Value scale(Value a, double c);
  Value mul_const(Value a, const Tensor& c);
  // m*x + (1-m)*pred with x, m fixed tensors.
  Value merge_observed(const Tensor& x, const Tensor& m, Value pred);

  Value concat(Value a, Value b);                    // rank-1
  Value concat_cols(Value A, Value B);               // [T x a], [T x b] -> [T x (a+b)]
  Value stack_rows(const std::vector<Value>& rows);  // T vectors [d] -> [T x d]

  Value activation(Activation kind, Value x);
  Value sigmoid(Value x) { return activation(Activation::Sigmoid, x); }
  Value tanh_(Value x) { return activation(Activation::Tanh, x); }
  Value relu(Value x) { return activation(Activation::Relu, x); }
  // y = exp(-max(0, x)); the temporal decay curve.
  Value exp_neg_relu(Value x);

  // softmax(scale * s) with max-subtraction, rank-1.
  Value softmax_scaled(Value s, double scale);
  // Row-wise softmax(scale * S) for [m x n].
  Value softmax_rows_scaled(Value S, double scale);

  Value dot(Value a, Value b);  // rank-1 -> scalar [1]
  Value sum(Value a);           // -> scalar [1]
  // sum(mask * (x - pred)^2) -> scalar [1]; x, mask fixed.
  Value masked_sq_err_sum(Value pred, const Tensor& x, const Tensor& mask);

  // sum_i min_j ||B_i - A_j||_2 with B fixed; gradient reaches A only.
  Value min_pairwise_dist_sum(Value A, const Tensor& B);
  // sum over (row_a, row_b) pairs of ||A_{row_a} - B_{row_b}||_2, B fixed.
  Value assigned_dist_sum(Value A, const Tensor& B,
                          const std::vector<std::pair<std::size_t, std::size_t>>& pairs);
  // sum over ordered pairs j != j' of max(0, margin - ||A_j - A_j'||_2).
  Value separation_hinge_sum(Value A, double margin);

  const Tensor& val(Value v) const { return nodes_[v.id].value; }
  const Tensor& grad(Value v) const { return nodes_[v.id].grad; }
  bool requires_grad(Value v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and propagates adjoints in reverse order.
  // Root must be a scalar (numel == 1).
  void backward(Value root);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Tensor&)> backward;  // (tape, node grad)
  };

  Value push(Tensor value, bool requires_grad,
             std::function<void(Tape&, const Tensor&)> bw);
  Tensor& grad_ref(int id);
  static void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

  std::deque<Node> nodes_;  // deque: references stay valid while nodes append
  bool grad_enabled_;
};

// Elementwise activations on raw tensors (shared with the tape ops).
double activation_scalar(Activation kind, double x);
double activation_grad_scalar(Activation kind, double x, double y);

}  // namespace prime

#pragma once

// Minimal tape-free reverse-mode automatic differentiation over dense
// row-major matrices. Rows index the minibatch; images are stored flattened
// in channel-major (C, H, W) order within a row.
//
// Every op returns a Var whose node keeps references to its inputs and a
// closure that pushes the output gradient back to them. backward() walks the
// graph in reverse topological order from a 1x1 loss.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace latplan::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;

  template <class Expr>
  void accumulate(const Expr& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  /// Gradient after backward(); a zero matrix of the value's shape if none flowed.
  Matrix grad() const;
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const { return node_->value(0, 0); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Whether ops record their inputs for differentiation (thread-local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds a result node; the closure is dropped when no input needs a gradient.
Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backprop);

/// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
/// node that requires one. `loss` must be 1x1.
void backward(const Var& loss);

Var constant(Matrix value);
Var parameter(Matrix value);
Var detach(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a + row broadcast over rows; `row` is 1 x cols.
Var add_row(const Var& a, const Var& row);
/// a * row broadcast over rows.
Var mul_row(const Var& a, const Var& row);
Var matmul(const Var& a, const Var& b);
/// x W (+ b) with b a 1 x out row; b may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);
Var concat_cols(const Var& a, const Var& b);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
/// Per-row sum -> rows x 1.
Var sum_cols(const Var& x);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// ---- fused per-row loss terms (each returns rows x 1) ----

/// sum_d (target - pred)^2; gradient flows into pred only.
Var squared_error_rows(const Matrix& target, const Var& pred);
/// sum_f KL(Bern(sigmoid(q_logits)) || Bern(sigmoid(p_logits))).
Var kl_bernoulli_logits_rows(const Var& q_logits, const Var& p_logits);
/// sum_f KL(Bern(sigmoid(q_logits)) || Bern(eps)).
Var kl_bernoulli_prior_rows(const Var& q_logits, double eps);
/// sum_k q_k (log q_k - log p_k) with q = softmax(q_logits), p = softmax(p_logits).
Var kl_categorical_logits_rows(const Var& q_logits, const Var& p_logits);
/// sum_k q_k log q_k + log C with q = softmax(q_logits).
Var kl_categorical_uniform_rows(const Var& q_logits);
/// sum_f softplus(l) - t l (binary cross entropy with logits).
Var bce_logits_rows(const Var& logits, const Matrix& target);

// ---- convolution and batch normalization ----

struct ConvGeometry {
  int in_channels = 1;
  int height = 1;
  int width = 1;
  int kernel = 5;
  int out_channels = 1;
};

/// Stride-1 same-padded 2D convolution. x: B x (Cin H W), w: Cout x (Cin k k),
/// b: 1 x Cout (may be undefined). Output: B x (Cout H W).
Var conv2d(const Var& x, const Var& w, const Var& b, const ConvGeometry& geom);

struct BatchStats {
  RowVector mean;
  RowVector var;  // biased (population) variance
};

/// Training-mode batch normalization over `channels`, each spanning `spatial`
/// consecutive entries of a row. Statistics are taken over rows x spatial.
/// The batch statistics are written to `stats` when non-null.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, int channels, int spatial,
                     double eps, BatchStats* stats);

/// Inference-mode batch normalization with fixed statistics.
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const RowVector& mean,
                    const RowVector& var, int channels, int spatial, double eps);

}  // namespace latplan::ad

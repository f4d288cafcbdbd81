#include "latplan/tensor/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "latplan/common/error.hpp"

namespace latplan::ad {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const char* what) {
  if (!cond) throw ConfigError(std::string("autodiff: ") + what);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string("autodiff: shape mismatch in ") + op + " (" +
                      std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                      std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

Matrix log_softmax_matrix(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Matrix Var::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backprop = std::move(backprop);
    }
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  require(loss.defined() && loss.rows() == 1 && loss.cols() == 1, "backward needs a 1x1 loss");
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
  }
}

Var constant(Matrix value) { return Var(std::move(value), false); }
Var parameter(Matrix value) { return Var(std::move(value), true); }

Var detach(const Var& x) { return constant(x.value()); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    parent(self, 0).accumulate(self.grad);
    parent(self, 1).accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    parent(self, 0).accumulate(self.grad);
    parent(self, 1).accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(self.grad.cwiseProduct(pa.value));
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) { parent(self, 0).accumulate(self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  return make_result((a.value().array() + s).matrix(), {a},
                     [](Node& self) { parent(self, 0).accumulate(self.grad); });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    parent(self, 0).accumulate(self.grad);
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate(self.grad.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "mul_row shape mismatch");
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(out), {a, row}, [](Node& self) {
    auto& pa = parent(self, 0);
    auto& pr = parent(self, 1);
    if (pa.requires_grad) {
      pa.accumulate((self.grad.array().rowwise() * pr.value.row(0).array()).matrix());
    }
    if (pr.requires_grad) pr.accumulate(self.grad.cwiseProduct(pa.value).colwise().sum());
  });
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul inner dimension mismatch");
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * self.grad);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require(x.cols() == w.rows(), "linear input width mismatch");
  Matrix out = x.value() * w.value();
  if (b.defined()) {
    require(b.rows() == 1 && b.cols() == w.cols(), "linear bias shape mismatch");
    out.rowwise() += b.value().row(0);
    return make_result(std::move(out), {x, w, b}, [](Node& self) {
      auto& px = parent(self, 0);
      auto& pw = parent(self, 1);
      auto& pb = parent(self, 2);
      if (px.requires_grad) px.accumulate(self.grad * pw.value.transpose());
      if (pw.requires_grad) pw.accumulate(px.value.transpose() * self.grad);
      if (pb.requires_grad) pb.accumulate(self.grad.colwise().sum());
    });
  }
  return matmul(x, w);
}

Var concat_cols(const Var& a, const Var& b) {
  require(a.rows() == b.rows(), "concat_cols row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.value();
  out.rightCols(b.cols()) = b.value();
  const auto ca = a.cols();
  const auto cb = b.cols();
  return make_result(std::move(out), {a, b}, [ca, cb](Node& self) {
    parent(self, 0).accumulate(self.grad.leftCols(ca));
    parent(self, 1).accumulate(self.grad.rightCols(cb));
  });
}

Var relu(const Var& x) {
  Matrix out = x.value().cwiseMax(0.0);
  return make_result(std::move(out), {x}, [](Node& self) {
    auto& px = parent(self, 0);
    px.accumulate((px.value.array() > 0.0).select(self.grad, 0.0).matrix());
  });
}

Var sigmoid(const Var& x) {
  Matrix out = x.value().unaryExpr([](double v) { return stable_sigmoid(v); });
  return make_result(std::move(out), {x}, [](Node& self) {
    const auto& y = self.value.array();
    parent(self, 0).accumulate((self.grad.array() * y * (1.0 - y)).matrix());
  });
}

Var log_softmax_rows(const Var& x) {
  Matrix out = log_softmax_matrix(x.value());
  return make_result(std::move(out), {x}, [](Node& self) {
    Matrix p = self.value.array().exp().matrix();
    Matrix gsum = self.grad.rowwise().sum();
    Matrix g = self.grad - (p.array().colwise() * gsum.col(0).array()).matrix();
    parent(self, 0).accumulate(g);
  });
}

Var softmax_rows(const Var& x) {
  Matrix out = log_softmax_matrix(x.value()).array().exp().matrix();
  return make_result(std::move(out), {x}, [](Node& self) {
    const Matrix& y = self.value;
    Matrix dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = (y.array() * (self.grad.array().colwise() - dot.col(0).array())).matrix();
    parent(self, 0).accumulate(g);
  });
}

Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const auto r = x.rows();
  const auto c = x.cols();
  return make_result(std::move(out), {x}, [r, c](Node& self) {
    parent(self, 0).accumulate(Matrix::Constant(r, c, self.grad(0, 0)));
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  require(n > 0, "mean of an empty matrix");
  return scale(sum(x), 1.0 / n);
}

Var sum_cols(const Var& x) {
  Matrix out = x.value().rowwise().sum();
  const auto c = x.cols();
  return make_result(std::move(out), {x}, [c](Node& self) {
    Matrix g = self.grad.col(0).replicate(1, c);
    parent(self, 0).accumulate(g);
  });
}

Var squared_error_rows(const Matrix& target, const Var& pred) {
  require_same_shape(target, pred.value(), "squared_error_rows");
  Matrix diff = pred.value() - target;
  Matrix out = diff.array().square().rowwise().sum().matrix();
  return make_result(std::move(out), {pred}, [diff = std::move(diff)](Node& self) {
    Matrix g = (2.0 * diff.array()).colwise() * self.grad.col(0).array();
    parent(self, 0).accumulate(g);
  });
}

Var kl_bernoulli_logits_rows(const Var& q_logits, const Var& p_logits) {
  require_same_shape(q_logits.value(), p_logits.value(), "kl_bernoulli_logits_rows");
  const Matrix& a = q_logits.value();
  const Matrix& b = p_logits.value();
  // KL = q (a - b) - softplus(a) + softplus(b), q = sigmoid(a).
  Matrix q = a.unaryExpr([](double v) { return stable_sigmoid(v); });
  Matrix elem = q.cwiseProduct(a - b) - a.unaryExpr([](double v) { return softplus(v); }) +
                b.unaryExpr([](double v) { return softplus(v); });
  Matrix out = elem.rowwise().sum();
  return make_result(std::move(out), {q_logits, p_logits}, [q = std::move(q)](Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    const auto& up = self.grad.col(0).array();
    if (pa.requires_grad) {
      Matrix g = (q.array() * (1.0 - q.array()) * (pa.value - pb.value).array()).colwise() * up;
      pa.accumulate(g);
    }
    if (pb.requires_grad) {
      Matrix p = pb.value.unaryExpr([](double v) { return stable_sigmoid(v); });
      Matrix g = (p - q).array().colwise() * up;
      pb.accumulate(g);
    }
  });
}

Var kl_bernoulli_prior_rows(const Var& q_logits, double eps) {
  require(eps > 0.0 && eps < 1.0, "kl_bernoulli_prior_rows: eps outside (0, 1)");
  const double b = std::log(eps) - std::log1p(-eps);
  return kl_bernoulli_logits_rows(q_logits, constant(Matrix::Constant(q_logits.rows(), q_logits.cols(), b)));
}

Var kl_categorical_logits_rows(const Var& q_logits, const Var& p_logits) {
  require_same_shape(q_logits.value(), p_logits.value(), "kl_categorical_logits_rows");
  Matrix logq = log_softmax_matrix(q_logits.value());
  Matrix logp = log_softmax_matrix(p_logits.value());
  Matrix q = logq.array().exp().matrix();
  Matrix diff = logq - logp;
  Matrix out = q.cwiseProduct(diff).rowwise().sum();
  Matrix kl = out;
  return make_result(std::move(out), {q_logits, p_logits},
                     [q = std::move(q), logp = std::move(logp), diff = std::move(diff),
                      kl = std::move(kl)](Node& self) {
                       auto& pa = parent(self, 0);
                       auto& pb = parent(self, 1);
                       const auto& up = self.grad.col(0).array();
                       if (pa.requires_grad) {
                         Matrix g = q.array() * (diff.array().colwise() - kl.col(0).array());
                         g = g.array().colwise() * up;
                         pa.accumulate(g);
                       }
                       if (pb.requires_grad) {
                         Matrix g = (logp.array().exp() - q.array()).colwise() * up;
                         pb.accumulate(g);
                       }
                     });
}

Var kl_categorical_uniform_rows(const Var& q_logits) {
  return kl_categorical_logits_rows(q_logits,
                                    constant(Matrix::Zero(q_logits.rows(), q_logits.cols())));
}

Var bce_logits_rows(const Var& logits, const Matrix& target) {
  require_same_shape(logits.value(), target, "bce_logits_rows");
  const Matrix& l = logits.value();
  Matrix elem = l.unaryExpr([](double v) { return softplus(v); }) - target.cwiseProduct(l);
  Matrix out = elem.rowwise().sum();
  Matrix t = target;
  return make_result(std::move(out), {logits}, [t = std::move(t)](Node& self) {
    auto& pl = parent(self, 0);
    Matrix s = pl.value.unaryExpr([](double v) { return stable_sigmoid(v); });
    Matrix g = (s - t).array().colwise() * self.grad.col(0).array();
    pl.accumulate(g);
  });
}

}  // namespace latplan::ad

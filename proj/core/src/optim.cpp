#include "latplan/tensor/optim.hpp"

#include <cmath>

namespace latplan::ad {

double clip_by_norm(Matrix& g, double max_norm) {
  const double n = g.norm();
  if (max_norm > 0.0 && n > max_norm) g *= max_norm / n;
  return n;
}

AdamOptimizer::AdamOptimizer(std::vector<Var> params, double lr, bool rectified, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)), lr_(lr), rectified_(rectified), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamOptimizer::step(double clip_norm) {
  ++t_;
  const double b1t = std::pow(beta1_, static_cast<double>(t_));
  const double b2t = std::pow(beta2_, static_cast<double>(t_));
  const double rho_inf = 2.0 / (1.0 - beta2_) - 1.0;
  const double rho_t = rho_inf - 2.0 * static_cast<double>(t_) * b2t / (1.0 - b2t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (!p.has_grad()) continue;
    Matrix g = p.node()->grad;
    clip_by_norm(g, clip_norm);
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
    Matrix m_hat = m_[i] / (1.0 - b1t);
    Matrix& w = p.mutable_value();
    if (!rectified_) {
      const Matrix v_hat = v_[i] / (1.0 - b2t);
      w.array() -= lr_ * m_hat.array() / (v_hat.array().sqrt() + eps_);
    } else if (rho_t > 5.0) {
      const double r = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                                 ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
      const Matrix v_hat = (v_[i] / (1.0 - b2t)).cwiseSqrt();
      w.array() -= lr_ * r * m_hat.array() / (v_hat.array() + eps_);
    } else {
      w -= lr_ * m_hat;
    }
  }
}

}  // namespace latplan::ad

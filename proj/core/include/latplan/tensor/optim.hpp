#pragma once

#include <string>
#include <vector>

#include "latplan/tensor/autodiff.hpp"

namespace latplan::ad {

/// Rescales g in place so that its Frobenius norm is at most max_norm.
/// Returns the norm before clipping.
double clip_by_norm(Matrix& g, double max_norm);

/// Adam, optionally with the rectified variance term (RAdam). Parameters
/// without a gradient are skipped.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Var> params, double lr, bool rectified, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-7);

  /// Applies one update. When clip_norm > 0 each gradient tensor is clipped
  /// to that norm first.
  void step(double clip_norm);
  void zero_grad();
  long steps() const { return t_; }

 private:
  std::vector<Var> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  double lr_;
  bool rectified_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
};

}  // namespace latplan::ad

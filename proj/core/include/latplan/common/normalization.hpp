#pragma once

#include <vector>

#include "latplan/tensor/autodiff.hpp"

namespace latplan {

/// Per-pixel affine standardization fitted on a training split.
struct Normalization {
  ad::RowVector mean;
  ad::RowVector scale;  ///< per-pixel divisor, 1 where the training variance is 0

  /// An empty normalization is the identity.
  bool empty() const { return mean.size() == 0; }
  ad::Matrix apply(const ad::Matrix& raw) const;
  ad::Matrix invert(const ad::Matrix& normalized) const;
};

/// Mean and population standard deviation of the selected rows.
Normalization fit_normalization(const ad::Matrix& raw, const std::vector<int>& rows);

}  // namespace latplan

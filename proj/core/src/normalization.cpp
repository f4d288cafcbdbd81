#include "latplan/common/normalization.hpp"

#include <cmath>

#include "latplan/common/error.hpp"

namespace latplan {

ad::Matrix Normalization::apply(const ad::Matrix& raw) const {
  if (empty()) return raw;
  if (raw.cols() != mean.size()) throw ConfigError("normalization: image width mismatch");
  ad::Matrix out = raw.rowwise() - mean;
  out.array().rowwise() /= scale.array();
  return out;
}

ad::Matrix Normalization::invert(const ad::Matrix& normalized) const {
  if (empty()) return normalized;
  if (normalized.cols() != mean.size()) throw ConfigError("normalization: image width mismatch");
  ad::Matrix out = normalized.array().rowwise() * scale.array();
  out.rowwise() += mean;
  return out;
}

Normalization fit_normalization(const ad::Matrix& raw, const std::vector<int>& rows) {
  if (rows.empty()) throw ConfigError("fit_normalization: no rows");
  Normalization n;
  n.mean = ad::RowVector::Zero(raw.cols());
  for (int r : rows) n.mean += raw.row(r);
  n.mean /= static_cast<double>(rows.size());
  ad::RowVector var = ad::RowVector::Zero(raw.cols());
  for (int r : rows) var += (raw.row(r) - n.mean).cwiseAbs2();
  var /= static_cast<double>(rows.size());
  n.scale = var.unaryExpr([](double v) { return v > 1e-12 ? std::sqrt(v) : 1.0; });
  return n;
}

}  // namespace latplan

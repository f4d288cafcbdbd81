#pragma once

#include <string>

#include "latplan/common/archive.hpp"
#include "latplan/common/error.hpp"
#include "latplan/tensor/autodiff.hpp"

namespace latplan {

template <class Derived>
void put_matrix(Archive& ar, const std::string& name, const Eigen::MatrixBase<Derived>& m) {
  ad::Matrix rm = m;
  ar.put(name, {rm.rows(), rm.cols()}, std::vector<double>(rm.data(), rm.data() + rm.size()));
}

inline ad::Matrix get_matrix(const Archive& ar, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  const auto& a = ar.get(name);
  if (a.shape.size() != 2 || a.shape[0] != rows || a.shape[1] != cols) {
    throw ConfigError("archive array '" + name + "' has an unexpected shape");
  }
  ad::Matrix m(rows, cols);
  std::copy(a.data.begin(), a.data.end(), m.data());
  return m;
}

inline ad::Matrix get_matrix(const Archive& ar, const std::string& name) {
  const auto& a = ar.get(name);
  if (a.shape.size() != 2) throw ConfigError("archive array '" + name + "' is not a matrix");
  return get_matrix(ar, name, a.shape[0], a.shape[1]);
}

}  // namespace latplan

#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <complex>
#include <stdexcept>
#include <string>

namespace opf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Complex = std::complex<double>;
using SpMat = Eigen::SparseMatrix<double>;
using SpMatC = Eigen::SparseMatrix<Complex>;

constexpr double kPi = 3.14159265358979323846;

/// Error raised for malformed inputs or violated preconditions.
class OpfError : public std::runtime_error {
 public:
  explicit OpfError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace opf

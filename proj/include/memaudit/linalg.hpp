#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "memaudit/error.hpp"
#include "memaudit/tensorio.hpp"

namespace memaudit {

/// Row-major so that one sample is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Matrix tensor_to_matrix(const Tensor& t) {
  if (t.shape.size() != 2) {
    throw ValidationError("expected a rank-2 tensor, got rank " + std::to_string(t.shape.size()));
  }
  Matrix m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = t.data[static_cast<std::size_t>(i)];
  return m;
}

inline Tensor matrix_to_tensor(const Matrix& m) {
  Tensor t;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return t;
}

/// Q diag(f(max(lambda, 0))) Q^T for a symmetric matrix. Negative
/// eigenvalues can only come from round-off here and are clamped.
template <class F>
Matrix symmetric_spectral_map(const Matrix& sym, F&& f) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Eigen::MatrixXd(sym), Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw Error("symmetric eigendecomposition did not converge");
  }
  Vector lambda = solver.eigenvalues().cwiseMax(0.0);
  for (Eigen::Index i = 0; i < lambda.size(); ++i) lambda[i] = f(lambda[i]);
  const Eigen::MatrixXd& q = solver.eigenvectors();
  Matrix out = q * lambda.asDiagonal() * q.transpose();
  // exact symmetry, independent of GEMM rounding
  return (0.5 * (out + out.transpose())).eval();
}

/// Column means and the 1/(n-1) sample covariance.
inline std::pair<Vector, Matrix> mean_and_covariance(const Matrix& x) {
  const auto n = x.rows();
  Vector mean = x.colwise().mean().transpose();
  Matrix centered = x.rowwise() - mean.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  cov = (0.5 * (cov + cov.transpose())).eval();
  return {std::move(mean), std::move(cov)};
}

}  // namespace memaudit

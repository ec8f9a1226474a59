#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "memaudit/error.hpp"
#include "memaudit/linalg.hpp"

namespace memaudit {

/// Mean and 1/(n-1) covariance of a feature matrix.
struct GaussianSummary {
  Vector mean;
  Matrix covariance;
};

inline GaussianSummary summarize_gaussian(const Matrix& x) {
  if (x.rows() < 2) throw ValidationError("gaussian summary: need at least 2 rows");
  if (!all_finite(x)) throw ValidationError("gaussian summary: non-finite features");
  auto [mean, cov] = mean_and_covariance(x);
  return {std::move(mean), std::move(cov)};
}

/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).
///
/// tr((S_a S_b)^(1/2)) is taken as the trace of the square root of the
/// symmetric PSD matrix S_a^(1/2) S_b S_a^(1/2), which has the same
/// eigenvalues as S_a S_b.
inline double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.mean.size() != b.mean.size()) throw ValidationError("frechet_distance: dimension mismatch");
  const Matrix sqrt_a = symmetric_spectral_map(a.covariance, [](double l) { return std::sqrt(l); });
  Matrix inner = sqrt_a * b.covariance * sqrt_a;
  inner = (0.5 * (inner + inner.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Eigen::MatrixXd(inner), Eigen::EigenvaluesOnly);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
    tr_sqrt += std::sqrt(std::max(solver.eigenvalues()[i], 0.0));
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double value = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

/// Same quantity from raw features. With centered A, B the nonzero
/// eigenvalues of S_a S_b are the squared singular values of
/// A B^T / sqrt((n_a - 1)(n_b - 1)), which is small when n << dim.
inline double frechet_distance(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ValidationError("frechet_distance: dimension mismatch");
  if (a.rows() < 2 || b.rows() < 2) throw ValidationError("frechet_distance: need at least 2 rows per set");
  if (!all_finite(a) || !all_finite(b)) throw ValidationError("frechet_distance: non-finite features");
  const Vector mu_a = a.colwise().mean().transpose();
  const Vector mu_b = b.colwise().mean().transpose();
  const Eigen::MatrixXd ca = a.rowwise() - mu_a.transpose();
  const Eigen::MatrixXd cb = b.rowwise() - mu_b.transpose();
  const double na = static_cast<double>(a.rows() - 1), nb = static_cast<double>(b.rows() - 1);
  const Eigen::MatrixXd cross = ca * cb.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross);
  const double tr_sqrt = svd.singularValues().sum() / std::sqrt(na * nb);
  const double value = (mu_a - mu_b).squaredNorm() + ca.squaredNorm() / na + cb.squaredNorm() / nb - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

namespace detail {

inline double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Median pairwise Euclidean distance over the pooled rows of a and b.
inline double median_heuristic_bandwidth(const Matrix& a, const Matrix& b) {
  Matrix pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) d.push_back((pooled.row(i) - pooled.row(j)).norm());
  return d.empty() ? 0.0 : detail::median(std::move(d));
}

/// Biased (V-statistic) MMD^2 with k(x,y) = exp(-|x-y|^2 / (2 h^2)).
/// Without an explicit bandwidth h is the pooled median distance, floored
/// at 1e-12.
inline double mmd_rbf(const Matrix& a, const Matrix& b, std::optional<double> bandwidth = std::nullopt) {
  if (a.rows() < 1 || b.rows() < 1) throw ValidationError("mmd_rbf: both samples must be non-empty");
  if (a.cols() != b.cols()) throw ValidationError("mmd_rbf: dimension mismatch");
  if (!all_finite(a) || !all_finite(b)) throw ValidationError("mmd_rbf: non-finite features");
  const double h = std::max(bandwidth ? *bandwidth : median_heuristic_bandwidth(a, b), 1e-12);
  const double inv = 1.0 / (2.0 * h * h);
  auto mean_kernel = [&](const Matrix& x, const Matrix& y) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < y.rows(); ++j) sum += std::exp(-(x.row(i) - y.row(j)).squaredNorm() * inv);
    return sum / static_cast<double>(x.rows() * y.rows());
  };
  return mean_kernel(a, a) + mean_kernel(b, b) - 2.0 * mean_kernel(a, b);
}

/// exp(Shannon entropy) of the eigenvalues of K/n, K the cosine Gram matrix.
inline double vendi_score(const Matrix& feats) {
  if (feats.rows() < 1) throw ValidationError("vendi_score: need at least one row");
  if (!all_finite(feats)) throw ValidationError("vendi_score: non-finite features");
  Matrix x = feats;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    if (n > 0.0) x.row(i) /= n;
  }
  Matrix k = (x * x.transpose()) / static_cast<double>(x.rows());
  k = (0.5 * (k + k.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Eigen::MatrixXd(k), Eigen::EigenvaluesOnly);
  double entropy = 0.0;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
    const double l = solver.eigenvalues()[i];
    if (l > 0.0) entropy -= l * std::log(l);
  }
  return std::clamp(std::exp(entropy), 1.0, static_cast<double>(x.rows()));
}

}  // namespace memaudit

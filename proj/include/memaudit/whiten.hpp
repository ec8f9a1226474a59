#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "memaudit/error.hpp"
#include "memaudit/linalg.hpp"

namespace memaudit {

inline constexpr double kWhiteningEpsilon = 1e-6;
inline constexpr double kDegenerateNorm = 1e-12;

/// ZCA whitening fit on one layer of train features.
///
/// `w_matrix` is (C + eps I)^(-1/2), symmetric by construction. When the
/// fit had no more samples than dimensions the covariance is singular and
/// only the ridge keeps W finite; `rank_deficient` records that.
struct WhiteningTransform {
  int layer_id = 0;
  Vector mean;
  Matrix w_matrix;
  double epsilon = kWhiteningEpsilon;
  bool rank_deficient = false;

  Eigen::Index dimension() const { return mean.size(); }
};

inline WhiteningTransform fit_whitening(const Matrix& train_layer, double epsilon = kWhiteningEpsilon,
                                        int layer_id = 0) {
  if (train_layer.rows() < 2) {
    throw ValidationError("fit_whitening: need at least 2 samples, got " +
                          std::to_string(train_layer.rows()));
  }
  if (!all_finite(train_layer)) throw ValidationError("fit_whitening: non-finite input");
  if (!(epsilon > 0.0)) throw ValidationError("fit_whitening: epsilon must be positive");

  auto [mean, cov] = mean_and_covariance(train_layer);
  WhiteningTransform t;
  t.layer_id = layer_id;
  t.mean = std::move(mean);
  t.epsilon = epsilon;
  t.rank_deficient = train_layer.rows() <= train_layer.cols();
  t.w_matrix = symmetric_spectral_map(cov, [epsilon](double l) { return 1.0 / std::sqrt(l + epsilon); });
  return t;
}

/// (x - mean) W
inline Vector apply_whitening(const WhiteningTransform& t, const Vector& x) {
  if (x.size() != t.dimension()) {
    throw ValidationError("apply_whitening: vector has length " + std::to_string(x.size()) +
                          ", transform expects " + std::to_string(t.dimension()));
  }
  return t.w_matrix.transpose() * (x - t.mean);
}

/// Row-wise (X - 1 mean^T) W.
inline Matrix apply_whitening(const WhiteningTransform& t, const Matrix& x) {
  if (x.cols() != t.dimension()) {
    throw ValidationError("apply_whitening: matrix has " + std::to_string(x.cols()) +
                          " columns, transform expects " + std::to_string(t.dimension()));
  }
  Matrix centered = x.rowwise() - t.mean.transpose();
  return centered * t.w_matrix;
}

struct NormalizedVector {
  Vector values;
  bool degenerate = false;
};

/// x / |x|; vectors with norm <= 1e-12 map to zero and are flagged.
inline NormalizedVector l2_normalize(const Vector& x) {
  const double norm = x.norm();
  if (!(norm > kDegenerateNorm)) return {Vector::Zero(x.size()), true};
  return {x / norm, false};
}

/// Normalizes every row in place and returns the per-row degenerate flags.
inline std::vector<bool> l2_normalize_rows(Matrix& x) {
  std::vector<bool> degenerate(static_cast<std::size_t>(x.rows()), false);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    if (norm > kDegenerateNorm) {
      x.row(i) /= norm;
    } else {
      x.row(i).setZero();
      degenerate[static_cast<std::size_t>(i)] = true;
    }
  }
  return degenerate;
}

}  // namespace memaudit

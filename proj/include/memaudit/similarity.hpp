#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "memaudit/error.hpp"
#include "memaudit/linalg.hpp"
#include "memaudit/parallel.hpp"

namespace memaudit {

/// Max cosine similarity of every test row to the train rows of one layer.
struct LayerSimilarity {
  int layer_id = 0;
  std::vector<double> scores;
  std::vector<std::size_t> neighbors;
  std::vector<std::uint8_t> degenerate;  // not vector<bool>: written concurrently
};

namespace detail {

inline void check_row_norms(const Matrix& m, const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n != 0.0 && std::abs(n - 1.0) > 1e-6) {
      throw ValidationError(std::string("layer_max_similarity: ") + what + " row " +
                            std::to_string(i) + " is not l2-normalized (norm " +
                            std::to_string(n) + ")");
    }
  }
}

}  // namespace detail

/// Exact brute-force search. The lowest train index wins ties, and each
/// score is a plain dot product evaluated the same way on any schedule.
inline LayerSimilarity layer_max_similarity(const Matrix& test_w, const Matrix& train_w,
                                            int layer_id = 0, std::size_t threads = 1) {
  if (train_w.rows() < 1) throw ValidationError("layer_max_similarity: empty train set");
  if (test_w.cols() != train_w.cols()) {
    throw ValidationError("layer_max_similarity: dimension mismatch (" +
                          std::to_string(test_w.cols()) + " vs " + std::to_string(train_w.cols()) + ")");
  }
  detail::check_row_norms(test_w, "test");
  detail::check_row_norms(train_w, "train");

  const auto n_test = static_cast<std::size_t>(test_w.rows());
  LayerSimilarity out;
  out.layer_id = layer_id;
  out.scores.assign(n_test, 0.0);
  out.neighbors.assign(n_test, 0);
  out.degenerate.assign(n_test, 0);

  parallel_for(n_test, threads, [&](std::size_t j) {
    const auto row = test_w.row(static_cast<Eigen::Index>(j));
    if (row.squaredNorm() == 0.0) {
      out.degenerate[j] = 1;
      return;  // scores 0 against everything; neighbor 0
    }
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (Eigen::Index i = 0; i < train_w.rows(); ++i) {
      const double dot = row.dot(train_w.row(i));
      if (dot > best) {
        best = dot;
        arg = static_cast<std::size_t>(i);
      }
    }
    out.scores[j] = std::clamp(best, -1.0, 1.0);
    out.neighbors[j] = arg;
  });
  return out;
}

}  // namespace memaudit

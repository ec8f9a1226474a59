#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "memaudit/aggregate.hpp"
#include "memaudit/embedder.hpp"
#include "memaudit/error.hpp"
#include "memaudit/linalg.hpp"
#include "memaudit/parallel.hpp"
#include "memaudit/rng.hpp"
#include "memaudit/similarity.hpp"
#include "memaudit/whiten.hpp"

/**
 * @file calibrate.hpp
 *
 * @brief Empirical null calibration, MI/ONI scoring and the audit pipeline.
 *
 * The audit whitens every layer with a transform fit on train only, takes
 * each test sample's best cosine match per layer, fuses the layers with a
 * geometric mean and standardizes the fused score against a null built from
 * train-half versus train-half comparisons run through the same pipeline.
 */

namespace memaudit {

inline constexpr double kNullVarianceRidge = 1e-8;
inline constexpr double kDefaultOniThreshold = 0.68;

struct BootstrapConfig {
  std::size_t n_iterations = 10;
  double fraction = 0.5;
  std::uint64_t seed = 42;
  /// When false, A and B are disjoint halves of one shuffle.
  bool allow_overlap = false;
  double whitening_epsilon = kWhiteningEpsilon;
  double aggregation_epsilon = kAggregationEpsilon;
};

struct NullCalibration {
  double mu_null = 0.0;
  double sigma_null = 1.0;
  std::vector<double> samples;
  std::size_t n_iterations = 0;
  double fraction = 0.5;
  std::uint64_t seed = 0;
  bool allow_overlap = false;

  bool operator==(const NullCalibration&) const = default;
};

inline nlohmann::json calibration_to_json(const NullCalibration& c) {
  return {{"mu_null", c.mu_null},       {"sigma_null", c.sigma_null},
          {"n_iterations", c.n_iterations}, {"fraction", c.fraction},
          {"seed", c.seed},             {"allow_overlap", c.allow_overlap},
          {"samples", c.samples}};
}

inline NullCalibration calibration_from_json(const nlohmann::json& j) {
  NullCalibration c;
  try {
    c.mu_null = j.at("mu_null").get<double>();
    c.sigma_null = j.at("sigma_null").get<double>();
    c.n_iterations = j.value("n_iterations", std::size_t{0});
    c.fraction = j.value("fraction", 0.5);
    c.seed = j.value("seed", std::uint64_t{0});
    c.allow_overlap = j.value("allow_overlap", false);
    if (j.contains("samples")) c.samples = j.at("samples").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("calibration: ") + e.what());
  }
  if (!(c.sigma_null > 0.0) || !std::isfinite(c.mu_null)) {
    throw ValidationError("calibration: sigma_null must be positive and mu_null finite");
  }
  return c;
}

/// (s - mu_null) / sigma_null
inline double memorization_index(double s, const NullCalibration& null) {
  return (s - null.mu_null) / null.sigma_null;
}

/// -tanh(MI): near -1 for likely copies, 0 for null-typical, +1 for novel.
inline double overfit_novelty_index(double mi) { return -std::tanh(mi); }

// ---------------------------------------------------------------------------
// Shared scoring path

struct ScoringResult {
  AggregationResult aggregation;
  std::vector<int> rank_deficient_layers;
};

/// Whitening is fit on `reference` only; `query` rows are scored against it.
inline ScoringResult score_against_reference(const std::map<int, Matrix>& reference,
                                             const std::map<int, Matrix>& query,
                                             double whitening_epsilon, double aggregation_epsilon,
                                             std::size_t threads = 1) {
  ScoringResult out;
  std::vector<LayerSimilarity> sims;
  sims.reserve(reference.size());
  for (const auto& [k, ref] : reference) {
    const Matrix& q = query.at(k);
    const WhiteningTransform t = fit_whitening(ref, whitening_epsilon, k);
    if (t.rank_deficient) out.rank_deficient_layers.push_back(k);
    Matrix ref_w = apply_whitening(t, ref);
    Matrix q_w = apply_whitening(t, q);
    l2_normalize_rows(ref_w);
    l2_normalize_rows(q_w);
    sims.push_back(layer_max_similarity(q_w, ref_w, k, threads));
  }
  out.aggregation = aggregate_layers(sims, aggregation_epsilon);
  return out;
}

namespace detail {

inline std::map<int, Matrix> select_rows(const std::map<int, Matrix>& layers,
                                         std::span<const std::size_t> rows) {
  std::map<int, Matrix> out;
  for (const auto& [k, m] : layers) {
    Matrix sub(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sub.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    }
    out.emplace(k, std::move(sub));
  }
  return out;
}

}  // namespace detail

/// Row indices of subsets A and B for one bootstrap iteration. Exposed so
/// tests can rebuild the null independently.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> bootstrap_split(
    std::size_t n, const BootstrapConfig& cfg, std::size_t iteration) {
  const auto m = static_cast<std::size_t>(std::floor(cfg.fraction * static_cast<double>(n)));
  Rng rng(derive_seed(cfg.seed, {iteration}));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(std::span(idx));
  std::vector<std::size_t> a(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
  std::vector<std::size_t> b;
  if (cfg.allow_overlap) {
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(std::span(idx));
    b.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
  } else {
    b.assign(idx.begin() + static_cast<std::ptrdiff_t>(m), idx.begin() + static_cast<std::ptrdiff_t>(2 * m));
  }
  return {std::move(a), std::move(b)};
}

/// Builds the null from train-half versus train-half similarities.
///
/// Each iteration draws its own stream from (seed, iteration), refits the
/// whitening on A and scores B against A. Per-sample fused scores from all
/// iterations are pooled in iteration order, so the result does not depend
/// on `threads`.
inline NullCalibration bootstrap_null(const FeatureSet& train, const BootstrapConfig& cfg = {},
                                      std::size_t threads = 1) {
  train.validate();
  const std::size_t n = train.n_samples();
  if (n < 4) throw ValidationError("bootstrap_null: need at least 4 train samples, got " + std::to_string(n));
  if (!(cfg.fraction > 0.0 && cfg.fraction <= 0.5)) {
    throw ValidationError("bootstrap_null: fraction must lie in (0, 0.5]");
  }
  if (cfg.n_iterations < 1) throw ValidationError("bootstrap_null: need at least one iteration");
  if (std::floor(cfg.fraction * static_cast<double>(n)) < 2) {
    throw ValidationError("bootstrap_null: fraction leaves fewer than 2 samples per subset");
  }

  std::vector<std::vector<double>> per_iter(cfg.n_iterations);
  parallel_for(cfg.n_iterations, threads, [&](std::size_t it) {
    const auto [a, b] = bootstrap_split(n, cfg, it);
    const auto res = score_against_reference(detail::select_rows(train.layers, a),
                                             detail::select_rows(train.layers, b),
                                             cfg.whitening_epsilon, cfg.aggregation_epsilon);
    auto& dst = per_iter[it];
    for (const auto& s : res.aggregation.samples) dst.push_back(s.s);
  });

  NullCalibration null;
  null.n_iterations = cfg.n_iterations;
  null.fraction = cfg.fraction;
  null.seed = cfg.seed;
  null.allow_overlap = cfg.allow_overlap;
  for (const auto& v : per_iter) null.samples.insert(null.samples.end(), v.begin(), v.end());

  const double count = static_cast<double>(null.samples.size());
  double sum = 0.0;
  for (double v : null.samples) sum += v;
  null.mu_null = sum / count;
  double ss = 0.0;
  for (double v : null.samples) ss += (v - null.mu_null) * (v - null.mu_null);
  null.sigma_null = std::sqrt(ss / count + kNullVarianceRidge);
  return null;
}

// ---------------------------------------------------------------------------
// Audit

struct AuditConfig {
  double whitening_epsilon = kWhiteningEpsilon;
  double aggregation_epsilon = kAggregationEpsilon;
  double threshold = kDefaultOniThreshold;
  BootstrapConfig bootstrap;
  /// Reused instead of bootstrapping when set.
  std::optional<NullCalibration> calibration;
  std::size_t threads = 1;
};

struct SampleResult {
  std::string sample_id;
  double s = 0.0;
  double d = 1.0;
  double mi = 0.0;
  double oni = 0.0;
  bool flagged = false;
  std::size_t consensus = 0;
  std::size_t consensus_neighbor = 0;
  std::vector<double> layer_scores;
  std::vector<std::size_t> neighbors;
  bool degenerate = false;
};

struct AuditReport {
  std::vector<int> layer_ids;
  std::vector<SampleResult> samples;
  double mean_mi = std::numeric_limits<double>::quiet_NaN();
  double mean_oni = std::numeric_limits<double>::quiet_NaN();
  double threshold = kDefaultOniThreshold;
  NullCalibration calibration;
  std::size_t n_train = 0;
  std::size_t clamped_negatives = 0;
  std::vector<int> rank_deficient_layers;

  std::size_t flagged_count() const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.flagged; }));
  }
};

namespace detail {

inline std::string join_ids(const std::vector<int>& ids) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
  os << "]";
  return os.str();
}

inline void check_compatible(const FeatureSet& train, const FeatureSet& test) {
  const auto a = train.layer_ids();
  const auto b = test.layer_ids();
  if (a != b) {
    std::vector<int> only_train, only_test;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(only_train));
    std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(only_test));
    throw ValidationError("layer mismatch: train has " + join_ids(a) + ", test has " + join_ids(b) +
                          " (only in train: " + join_ids(only_train) +
                          ", only in test: " + join_ids(only_test) + ")");
  }
  for (const auto& [k, m] : train.layers) {
    if (test.layers.at(k).cols() != m.cols()) {
      throw ValidationError("dimension mismatch at layer " + std::to_string(k) + ": train " +
                            std::to_string(m.cols()) + ", test " +
                            std::to_string(test.layers.at(k).cols()));
    }
  }
}

}  // namespace detail

/// Scores every test sample against train and calibrates against the null.
inline AuditReport audit(const FeatureSet& train, const FeatureSet& test, const AuditConfig& cfg = {}) {
  train.validate();
  if (test.n_samples() > 0 || !test.layers.empty()) test.validate();
  detail::check_compatible(train, test);

  AuditReport report;
  report.threshold = cfg.threshold;
  report.layer_ids = train.layer_ids();
  report.n_train = train.n_samples();
  report.calibration = cfg.calibration ? *cfg.calibration : bootstrap_null(train, cfg.bootstrap, cfg.threads);
  if (!(report.calibration.sigma_null > 0.0)) throw ValidationError("audit: sigma_null must be positive");

  const auto scored = score_against_reference(train.layers, test.layers, cfg.whitening_epsilon,
                                              cfg.aggregation_epsilon, cfg.threads);
  report.rank_deficient_layers = scored.rank_deficient_layers;
  report.clamped_negatives = scored.aggregation.clamped_negatives;

  const auto& agg = scored.aggregation.samples;
  report.samples.resize(agg.size());
  double mi_sum = 0.0, oni_sum = 0.0;
  for (std::size_t j = 0; j < agg.size(); ++j) {
    auto& r = report.samples[j];
    r.sample_id = test.manifest.samples.at(j).id;
    r.s = agg[j].s;
    r.d = agg[j].d;
    r.mi = memorization_index(r.s, report.calibration);
    r.oni = overfit_novelty_index(r.mi);
    r.flagged = r.oni < cfg.threshold;
    r.consensus = agg[j].consensus.count;
    r.consensus_neighbor = agg[j].consensus.neighbor;
    r.layer_scores = agg[j].layer_scores;
    r.neighbors = agg[j].layer_neighbors;
    r.degenerate = agg[j].degenerate;
    mi_sum += r.mi;
    oni_sum += r.oni;
  }
  if (!agg.empty()) {
    report.mean_mi = mi_sum / static_cast<double>(agg.size());
    report.mean_oni = oni_sum / static_cast<double>(agg.size());
  }
  return report;
}

}  // namespace memaudit

#include <numeric>

#include "test_util.hpp"

using namespace memaudit;
using memaudit::testing::make_feature_set;
using memaudit::testing::random_matrix;

namespace {

using Mat = std::vector<std::vector<double>>;

// Cyclic Jacobi eigendecomposition of a symmetric matrix: returns
// eigenvalues and eigenvectors (columns of v).
void jacobi_eigen(Mat a, std::vector<double>& values, Mat& v) {
  const std::size_t n = a.size();
  v.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i][i];
}

Mat rows_of(const Matrix& m, const std::vector<std::size_t>& idx) {
  Mat out;
  for (auto i : idx) {
    std::vector<double> r;
    for (Eigen::Index c = 0; c < m.cols(); ++c) r.push_back(m(static_cast<Eigen::Index>(i), c));
    out.push_back(r);
  }
  return out;
}

// Whiten `query` with statistics of `ref`, then l2-normalize each row.
Mat whiten_normalize(const Mat& ref, const Mat& query, double eps) {
  const std::size_t n = ref.size(), c = ref[0].size();
  std::vector<double> mu(c, 0.0);
  for (const auto& r : ref)
    for (std::size_t j = 0; j < c; ++j) mu[j] += r[j] / static_cast<double>(n);
  Mat cov(c, std::vector<double>(c, 0.0));
  for (const auto& r : ref)
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t b = 0; b < c; ++b) cov[a][b] += (r[a] - mu[a]) * (r[b] - mu[b]) / static_cast<double>(n - 1);
  std::vector<double> lam;
  Mat q;
  jacobi_eigen(cov, lam, q);
  Mat w(c, std::vector<double>(c, 0.0));
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = 0; b < c; ++b)
      for (std::size_t k = 0; k < c; ++k) w[a][b] += q[a][k] * q[b][k] / std::sqrt(std::max(lam[k], 0.0) + eps);
  Mat out;
  for (const auto& r : query) {
    std::vector<double> y(c, 0.0);
    for (std::size_t b = 0; b < c; ++b)
      for (std::size_t a = 0; a < c; ++a) y[b] += (r[a] - mu[a]) * w[a][b];
    double norm = 0.0;
    for (double v : y) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : y) v = norm > 1e-12 ? v / norm : 0.0;
    out.push_back(y);
  }
  return out;
}

struct OracleNull {
  double mu;
  double sigma;
  std::vector<double> samples;
};

// Null distribution written out directly: split, whiten on A, max cosine of
// each B row against A per layer, geometric mean over layers, pool.
OracleNull oracle_null(const std::map<int, Matrix>& layers, std::size_t iterations, double fraction,
                       std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(layers.begin()->second.rows());
  const auto m = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  OracleNull out{};
  for (std::size_t it = 0; it < iterations; ++it) {
    Rng rng(derive_seed(seed, {it}));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    const std::vector<std::size_t> a(perm.begin(), perm.begin() + static_cast<long>(m));
    const std::vector<std::size_t> b(perm.begin() + static_cast<long>(m), perm.begin() + static_cast<long>(2 * m));
    std::vector<double> log_sum(m, 0.0);
    for (const auto& [k, x] : layers) {
      const Mat ra = rows_of(x, a);
      const Mat wa = whiten_normalize(ra, ra, 1e-6);
      const Mat wb = whiten_normalize(ra, rows_of(x, b), 1e-6);
      for (std::size_t j = 0; j < m; ++j) {
        double best = -1.0;
        for (const auto& ar : wa) {
          double dot = 0.0;
          for (std::size_t c = 0; c < ar.size(); ++c) dot += wb[j][c] * ar[c];
          best = std::max(best, dot);
        }
        log_sum[j] += std::log(std::max(best, 0.0) + 1e-6);
      }
    }
    for (double l : log_sum) out.samples.push_back(std::exp(l / static_cast<double>(layers.size())));
  }
  double sum = 0.0;
  for (double v : out.samples) sum += v;
  out.mu = sum / static_cast<double>(out.samples.size());
  double ss = 0.0;
  for (double v : out.samples) ss += (v - out.mu) * (v - out.mu);
  out.sigma = std::sqrt(ss / static_cast<double>(out.samples.size()) + 1e-8);
  return out;
}

std::map<int, Matrix> gaussian_layers(Eigen::Index n, std::uint64_t seed) {
  return {{3, random_matrix(n, 4, seed)}, {7, random_matrix(n, 6, seed + 1)}, {11, random_matrix(n, 8, seed + 2)}};
}

}  // namespace

TEST(JacobiOracle, ReconstructsMatrix) {
  Mat a{{4, 1, 2}, {1, 3, 0}, {2, 0, 5}};
  std::vector<double> lam;
  Mat q;
  jacobi_eigen(a, lam, q);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += q[i][k] * lam[k] * q[j][k];
      EXPECT_NEAR(s, a[i][j], 1e-12);
    }
}

TEST(Calibration, NullMatchesIndependentOracle) {
  const auto layers = gaussian_layers(100, 17);
  BootstrapConfig cfg;
  cfg.seed = 5;
  const auto null = bootstrap_null(make_feature_set(layers), cfg);
  const auto oracle = oracle_null(layers, 10, 0.5, 5);
  ASSERT_EQ(null.samples.size(), oracle.samples.size());
  EXPECT_NEAR(null.mu_null, oracle.mu, 1e-6);
  EXPECT_NEAR(null.sigma_null, oracle.sigma, 1e-6);
  for (std::size_t i = 0; i < null.samples.size(); ++i) EXPECT_NEAR(null.samples[i], oracle.samples[i], 1e-6);
}

TEST(Calibration, SplitIsDisjointHalves) {
  BootstrapConfig cfg;
  const auto [a, b] = bootstrap_split(11, cfg, 3);
  EXPECT_EQ(a.size(), 5u);
  EXPECT_EQ(b.size(), 5u);
  std::set<std::size_t> all(a.begin(), a.end());
  all.insert(b.begin(), b.end());
  EXPECT_EQ(all.size(), 10u);
}

TEST(Calibration, DeterministicAndThreadIndependent) {
  const auto fs = make_feature_set(gaussian_layers(60, 3));
  BootstrapConfig cfg;
  cfg.seed = 9;
  const auto a = bootstrap_null(fs, cfg, 1);
  const auto b = bootstrap_null(fs, cfg, 1);
  const auto c = bootstrap_null(fs, cfg, 4);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  cfg.seed = 10;
  EXPECT_NE(bootstrap_null(fs, cfg).mu_null, a.mu_null);
}

TEST(Calibration, DuplicatedCorpusGivesUnitNull) {
  // 5 distinct rows, each repeated 20 times: every B row has a copy in A.
  const Matrix base = random_matrix(5, 6, 2);
  Matrix x(100, 6);
  for (int i = 0; i < 100; ++i) x.row(i) = base.row(i % 5);
  const auto null = bootstrap_null(make_feature_set({{3, x}, {7, x}}));
  EXPECT_NEAR(null.mu_null, 1.0, 1e-5);
  EXPECT_NEAR(null.sigma_null, 1e-4, 1e-6);
  EXPECT_GE(null.sigma_null, 1e-4);
}

TEST(Calibration, Errors) {
  EXPECT_THROW(bootstrap_null(make_feature_set({{3, random_matrix(3, 2, 1)}})), ValidationError);
  BootstrapConfig cfg;
  cfg.fraction = 0.6;
  EXPECT_THROW(bootstrap_null(make_feature_set(gaussian_layers(20, 1)), cfg), ValidationError);
  cfg.fraction = 0.0;
  EXPECT_THROW(bootstrap_null(make_feature_set(gaussian_layers(20, 1)), cfg), ValidationError);
}

TEST(Indices, MemorizationIndexExamples) {
  NullCalibration n;
  n.mu_null = 0.6;
  n.sigma_null = 0.05;
  EXPECT_NEAR(memorization_index(0.9, n), 6.0, 1e-12);
  EXPECT_EQ(memorization_index(0.6, n), 0.0);
  EXPECT_NEAR(memorization_index(0.65, n), 1.0, 1e-12);
}

TEST(Indices, OverfitNoveltyIndexExamples) {
  EXPECT_EQ(overfit_novelty_index(0.0), 0.0);
  EXPECT_NEAR(overfit_novelty_index(1.0), -0.7616, 1e-4);
  EXPECT_EQ(overfit_novelty_index(1e6), -1.0);
  EXPECT_EQ(overfit_novelty_index(-1e6), 1.0);
}

TEST(Audit, TotalLeakFlagsEverything) {
  const auto train = make_feature_set(gaussian_layers(60, 30));
  const auto report = audit(train, train);
  for (const auto& s : report.samples) {
    EXPECT_NEAR(s.s, 1.0, 1e-5);
    EXPECT_LT(s.oni, -0.99);
    EXPECT_TRUE(s.flagged);
    EXPECT_EQ(s.consensus, 3u);
  }
  EXPECT_EQ(report.flagged_count(), 60u);
}

TEST(Audit, DisjointDrawBehavesLikeNull) {
  // Reference the size of a bootstrap half, so test and null see the same
  // reference size.
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto train = make_feature_set(gaussian_layers(400, seed * 10));
    const auto test = make_feature_set(gaussian_layers(200, seed * 10 + 5), "t");
    AuditConfig cfg;
    cfg.bootstrap.seed = seed;
    cfg.calibration = bootstrap_null(train, cfg.bootstrap);
    std::vector<std::size_t> half(200);
    std::iota(half.begin(), half.end(), 0);
    const auto r = audit(train.subset(half), test, cfg);
    EXPECT_LT(std::abs(r.mean_mi), 1.0) << "seed " << seed;
  }
}

TEST(Audit, FullReferenceShiftsDisjointMiUp) {
  // Twice the null's reference size: max cosines grow, so a clean test set
  // sits above the null, but by well under two sigma.
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto train = make_feature_set(gaussian_layers(400, seed * 10));
    const auto test = make_feature_set(gaussian_layers(200, seed * 10 + 5), "t");
    AuditConfig cfg;
    cfg.bootstrap.seed = seed;
    const auto r = audit(train, test, cfg);
    EXPECT_GT(r.mean_mi, 0.0) << "seed " << seed;
    EXPECT_LT(r.mean_mi, 2.0) << "seed " << seed;
  }
}

TEST(Audit, IdentitiesAndThresholdSemantics) {
  const auto train = make_feature_set(gaussian_layers(80, 4));
  auto test_layers = gaussian_layers(20, 40);
  for (auto& [k, m] : test_layers) m.topRows(5) = train.layers.at(k).topRows(5);
  const auto test = make_feature_set(test_layers, "t");
  AuditConfig cfg;
  cfg.threshold = 0.0;
  const auto r = audit(train, test, cfg);
  for (const auto& s : r.samples) {
    EXPECT_EQ(s.oni, -std::tanh(s.mi));
    EXPECT_EQ(s.mi, (s.s - r.calibration.mu_null) / r.calibration.sigma_null);
    EXPECT_EQ(s.flagged, s.oni < 0.0);
  }
  EXPECT_EQ(memorization_index(r.calibration.mu_null, r.calibration), 0.0);
  EXPECT_GE(r.calibration.sigma_null, 1e-4);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(r.samples[i].s, 1.0, 1e-5);
}

TEST(Audit, CalibrationReuseSkipsBootstrap) {
  const auto train = make_feature_set(gaussian_layers(50, 6));
  const auto test = make_feature_set(gaussian_layers(10, 7), "t");
  NullCalibration fixed;
  fixed.mu_null = 0.3;
  fixed.sigma_null = 0.1;
  AuditConfig cfg;
  cfg.calibration = calibration_from_json(calibration_to_json(fixed));
  const auto r = audit(train, test, cfg);
  EXPECT_EQ(r.calibration.mu_null, 0.3);
  for (const auto& s : r.samples) EXPECT_EQ(s.mi, (s.s - 0.3) / 0.1);
}

TEST(Audit, BitwiseReproducibleAcrossThreads) {
  const auto train = make_feature_set(gaussian_layers(70, 8));
  const auto test = make_feature_set(gaussian_layers(30, 9), "t");
  AuditConfig cfg;
  cfg.threads = 1;
  const auto a = report_to_json(audit(train, test, cfg)).dump();
  cfg.threads = 4;
  const auto b = report_to_json(audit(train, test, cfg)).dump();
  EXPECT_EQ(a, b);
}

TEST(Audit, LayerMismatchListsDifference) {
  const auto train = make_feature_set(gaussian_layers(20, 1));
  auto other = gaussian_layers(5, 2);
  other.erase(11);
  other.emplace(12, random_matrix(5, 8, 3));
  try {
    audit(train, make_feature_set(other, "t"));
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("only in train: [11]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("only in test: [12]"), std::string::npos) << msg;
  }
}

TEST(Audit, DimensionMismatch) {
  const auto train = make_feature_set({{3, random_matrix(20, 4, 1)}});
  EXPECT_THROW(audit(train, make_feature_set({{3, random_matrix(5, 5, 2)}}, "t")), ValidationError);
}

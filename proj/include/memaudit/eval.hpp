#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "memaudit/augment.hpp"
#include "memaudit/baselines.hpp"
#include "memaudit/calibrate.hpp"
#include "memaudit/contaminate.hpp"
#include "memaudit/embedder.hpp"
#include "memaudit/error.hpp"
#include "memaudit/parallel.hpp"
#include "memaudit/report_io.hpp"
#include "memaudit/rng.hpp"
#include "memaudit/tensorio.hpp"

namespace memaudit {

// ---------------------------------------------------------------------------
// Detection statistics. Scores are oriented so that higher means "more
// likely a duplicate" (use s or MI, or -ONI).

struct DetectionResult {
  double auc = 0.0;
  double ap = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

namespace detail {

inline void check_detection_input(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  for (double s : scores) {
    if (std::isnan(s)) throw ValidationError("detection scores contain NaN");
  }
}

}  // namespace detail

/// Mann-Whitney AUC with average ranks for ties. Ranks are kept doubled so
/// the statistic is an exact integer ratio.
inline double roc_auc(std::span<const double> scores, const std::vector<bool>& labels) {
  detail::check_detection_input(scores, labels);
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::uint64_t>(std::count(labels.begin(), labels.end(), true));
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("roc_auc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

  std::uint64_t pos_rank_sum_x2 = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t avg_rank_x2 = (i + 1) + j;  // ranks i+1..j, averaged, doubled
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) pos_rank_sum_x2 += avg_rank_x2;
    }
    i = j;
  }
  const std::uint64_t u_x2 = pos_rank_sum_x2 - n_pos * (n_pos + 1);
  return static_cast<double>(u_x2) / static_cast<double>(2 * n_pos * n_neg);
}

/// Sum over positives of precision at their rank, divided by the number of
/// positives. Ranking is by descending score; tied scores keep their
/// original order (stable sort).
inline double average_precision(std::span<const double> scores, const std::vector<bool>& labels) {
  detail::check_detection_input(scores, labels);
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  if (n_pos == 0) throw ValidationError("average_precision: no positive labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]]) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return ap / static_cast<double>(n_pos);
}

inline DetectionResult detect(std::span<const double> scores, const std::vector<bool>& labels) {
  DetectionResult r;
  r.auc = roc_auc(scores, labels);
  r.ap = average_precision(scores, labels);
  r.n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  r.n_neg = labels.size() - r.n_pos;
  return r;
}

inline double sample_stddev(std::span<const double> v) {
  if (v.size() < 2) throw ValidationError("sample standard deviation needs at least 2 values");
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// std / |mean| across datasets.
inline double cross_dataset_cv(std::span<const double> values) {
  if (values.size() < 2) throw ValidationError("cross_dataset_cv: need at least 2 datasets");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (mean == 0.0) throw ValidationError("cross_dataset_cv: mean is zero, CV undefined");
  return sample_stddev(values) / std::abs(mean);
}

// ---------------------------------------------------------------------------
// Sweep

inline const std::vector<std::string>& sweep_metrics() {
  static const std::vector<std::string> names{"mi_mean", "oni_mean", "auc", "ap", "frechet", "mmd", "vendi"};
  return names;
}

struct ImageDataset {
  std::string name;
  std::vector<ImageSlice> train;
  std::vector<ImageSlice> test;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

struct SweepCell {
  std::string dataset;
  double level = 0.0;
  std::string augmentation;
  std::map<std::string, double> metrics;
};

/// Full factorial grid of (dataset, level, augmentation) cells.
struct SweepResult {
  std::vector<std::string> datasets;
  std::vector<double> levels;
  std::vector<std::string> augmentations;
  std::vector<SweepCell> cells;  // dataset-major, then level, then augmentation

  const SweepCell* find(const std::string& dataset, double level, const std::string& aug) const {
    for (const auto& c : cells) {
      if (c.dataset == dataset && c.level == level && c.augmentation == aug) return &c;
    }
    return nullptr;
  }

  double value(const std::string& dataset, double level, const std::string& aug, const std::string& metric) const {
    const SweepCell* c = find(dataset, level, aug);
    if (!c) {
      throw ValidationError("sweep: missing cell (" + dataset + ", " + format_double(level) + ", " + aug + ")");
    }
    auto it = c->metrics.find(metric);
    if (it == c->metrics.end()) throw ValidationError("sweep: cell has no metric '" + metric + "'");
    return it->second;
  }

  void validate() const {
    for (const auto& d : datasets)
      for (double l : levels)
        for (const auto& a : augmentations)
          for (const auto& m : sweep_metrics()) (void)value(d, l, a, m);
  }
};

/// Sample standard deviation of one metric across all augmentation
/// conditions of a (dataset, level) pair.
inline double augmentation_spread(const SweepResult& sweep, const std::string& metric,
                                  const std::string& dataset, double level) {
  std::vector<double> v;
  for (const auto& a : sweep.augmentations) v.push_back(sweep.value(dataset, level, a, metric));
  return sample_stddev(v);
}

struct SweepConfig {
  std::vector<double> levels{0.05, 0.15, 0.30, 0.45};
  std::vector<AugmentationSpec> augmentations = standard_augmentations();
  std::uint64_t seed = 42;
  ReferenceEmbedderConfig embedder;
  AuditConfig audit;
  std::size_t threads = 1;
  /// Cell reports, long-format CSV, plot data and summary go here when set.
  std::optional<fs::path> output_dir;
  /// Layer used for the Fréchet/MMD/Vendi baselines; default is all layers
  /// concatenated.
  std::optional<int> baseline_layer;
  /// MMD bandwidth = scale * pooled median distance.
  double mmd_bandwidth_scale = 0.25;
};

namespace detail {

inline void validate_sweep(const std::vector<ImageDataset>& datasets, const SweepConfig& cfg) {
  if (datasets.empty()) throw ValidationError("sweep: no datasets");
  if (cfg.levels.empty()) throw ValidationError("sweep: no duplication levels");
  if (cfg.augmentations.empty()) throw ValidationError("sweep: no augmentations configured");
  std::set<std::string> tags, names;
  for (const auto& a : cfg.augmentations) {
    a.validate();
    if (!tags.insert(to_tag(a)).second) throw ValidationError("sweep: duplicate augmentation " + to_tag(a));
  }
  std::set<double> lv;
  for (double l : cfg.levels) {
    if (!(l > 0.0 && l < 1.0)) throw ValidationError("sweep: level " + format_double(l) + " outside (0, 1)");
    if (!lv.insert(l).second) throw ValidationError("sweep: duplicate level " + format_double(l));
  }
  cfg.embedder.validate();
  for (const auto& d : datasets) {
    if (!names.insert(d.name).second) throw ValidationError("sweep: duplicate dataset name " + d.name);
    if (d.train.size() != d.train_ids.size() || d.test.size() != d.test_ids.size()) {
      throw ValidationError("sweep: dataset " + d.name + " has mismatched ids");
    }
    for (double l : cfg.levels) {
      const auto k = replacement_count(l, d.test.size());
      if (k == 0 || k > d.train.size() || k > d.test.size()) {
        throw ValidationError("sweep: level " + format_double(l) + " is infeasible for dataset " + d.name);
      }
    }
  }
  if (!(cfg.mmd_bandwidth_scale > 0.0) || !std::isfinite(cfg.mmd_bandwidth_scale)) {
    throw ValidationError("sweep: mmd bandwidth scale must be > 0");
  }
  if (cfg.baseline_layer) {
    const auto ids = cfg.embedder.layer_ids();
    if (std::find(ids.begin(), ids.end(), *cfg.baseline_layer) == ids.end()) {
      throw ValidationError("sweep: baseline layer " + std::to_string(*cfg.baseline_layer) + " is not produced by the embedder");
    }
  }
}

inline DatasetManifest make_manifest(const std::string& name, Split split, const std::vector<std::string>& ids) {
  DatasetManifest m;
  m.name = name;
  m.split = split;
  for (const auto& id : ids) m.samples.push_back({id, id});
  return m;
}

inline std::string cell_file_name(const SweepCell& c) {
  return c.dataset + "__" + format_double(c.level) + "__" + c.augmentation + ".json";
}

/// Rows of the baseline feature space: one layer, or every layer side by side.
inline Matrix baseline_features(const FeatureSet& fs, std::optional<int> layer) {
  if (layer) return fs.layers.at(*layer);
  Eigen::Index cols = 0;
  for (const auto& [k, m] : fs.layers) cols += m.cols();
  Matrix out(static_cast<Eigen::Index>(fs.n_samples()), cols);
  Eigen::Index c = 0;
  for (const auto& [k, m] : fs.layers) {
    out.middleCols(c, m.cols()) = m;
    c += m.cols();
  }
  return out;
}

}  // namespace detail

/// Identifies everything a cell result depends on, so stale cell files from
/// a differently configured run are recomputed rather than reused.
inline std::string sweep_cell_key(const ImageDataset& d, const SweepConfig& cfg) {
  nlohmann::json j{{"dataset", d.name},
                   {"n_train", d.train.size()},
                   {"n_test", d.test.size()},
                   {"seed", cfg.seed},
                   {"embedder", embedder_config_to_json(cfg.embedder)},
                   {"threshold", cfg.audit.threshold},
                   {"bootstrap", {cfg.audit.bootstrap.n_iterations, cfg.audit.bootstrap.fraction, cfg.audit.bootstrap.allow_overlap}},
                   {"baseline_layer", cfg.baseline_layer ? nlohmann::json(*cfg.baseline_layer) : nlohmann::json("all")},
                   {"mmd_bandwidth_scale", cfg.mmd_bandwidth_scale}};
  return j.dump();
}

/// Runs contaminate -> embed -> audit -> score for every grid cell.
///
/// Per dataset the train embedding and the null are computed once; the null
/// seed and the contamination seed derive from (seed, dataset index). The
/// contamination seed is shared by all levels and augmentations of a
/// dataset, so conditions differ only in the perturbation applied and lower
/// levels inject a subset of the higher levels' duplicates.
inline SweepResult run_sweep(const std::vector<ImageDataset>& datasets, const SweepConfig& cfg) {
  detail::validate_sweep(datasets, cfg);

  SweepResult result;
  for (const auto& d : datasets) result.datasets.push_back(d.name);
  result.levels = cfg.levels;
  for (const auto& a : cfg.augmentations) result.augmentations.push_back(to_tag(a));

  struct Prepared {
    FeatureSet train;
    NullCalibration null;
    Matrix train_b;
    std::uint64_t plan_seed = 0;
    std::string key;
  };
  std::vector<Prepared> prepared(datasets.size());

  struct Job {
    std::size_t dataset;
    std::size_t level;
    std::size_t aug;
  };
  std::vector<Job> jobs;
  for (std::size_t d = 0; d < datasets.size(); ++d)
    for (std::size_t l = 0; l < cfg.levels.size(); ++l)
      for (std::size_t a = 0; a < cfg.augmentations.size(); ++a) jobs.push_back({d, l, a});
  result.cells.resize(jobs.size());

  // Resume: reuse cell files whose key matches this configuration.
  std::vector<bool> done(jobs.size(), false);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& cell = result.cells[i];
    cell.dataset = datasets[jobs[i].dataset].name;
    cell.level = cfg.levels[jobs[i].level];
    cell.augmentation = result.augmentations[jobs[i].aug];
    if (!cfg.output_dir) continue;
    const auto path = *cfg.output_dir / "cells" / detail::cell_file_name(cell);
    if (!fs::exists(path)) continue;
    try {
      const auto j = nlohmann::json::parse(read_file_bytes(path));
      if (j.at("key").get<std::string>() != sweep_cell_key(datasets[jobs[i].dataset], cfg)) continue;
      cell.metrics = j.at("metrics").get<std::map<std::string, double>>();
      done[i] = true;
    } catch (const std::exception&) {
      // unreadable cell file: recompute
    }
  }

  for (std::size_t d = 0; d < datasets.size(); ++d) {
    bool needed = false;
    for (std::size_t i = 0; i < jobs.size(); ++i) needed |= jobs[i].dataset == d && !done[i];
    if (!needed) continue;
    auto& p = prepared[d];
    p.train = embed_images(datasets[d].train,
                           detail::make_manifest(datasets[d].name, Split::train, datasets[d].train_ids),
                           cfg.embedder, cfg.threads);
    BootstrapConfig bcfg = cfg.audit.bootstrap;
    bcfg.seed = derive_seed(cfg.seed, {d, 0x6e756c6cULL});
    p.null = bootstrap_null(p.train, bcfg, cfg.threads);
    p.plan_seed = derive_seed(cfg.seed, {d, 0x706c616eULL});
    p.train_b = detail::baseline_features(p.train, cfg.baseline_layer);
    p.key = sweep_cell_key(datasets[d], cfg);
  }

  parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
    if (done[i]) return;
    const Job& job = jobs[i];
    const ImageDataset& ds = datasets[job.dataset];
    const Prepared& p = prepared[job.dataset];
    const AugmentationSpec& aug = cfg.augmentations[job.aug];
    auto& cell = result.cells[i];

    auto [images, plan] = inject_duplicates(ds.train, ds.test, cell.level, aug, p.plan_seed);
    const FeatureSet test = embed_images(images, detail::make_manifest(ds.name, Split::test, ds.test_ids), cfg.embedder);

    AuditConfig acfg = cfg.audit;
    acfg.calibration = p.null;
    acfg.threads = 1;
    const AuditReport report = audit(p.train, test, acfg);

    std::vector<double> scores;
    for (const auto& r : report.samples) scores.push_back(r.s);
    const auto det = detect(scores, plan.labels);

    const Matrix& train_b = p.train_b;
    const Matrix test_b = detail::baseline_features(test, cfg.baseline_layer);
    const double h = cfg.mmd_bandwidth_scale * median_heuristic_bandwidth(train_b, test_b);
    cell.metrics = {{"mi_mean", report.mean_mi},
                    {"oni_mean", report.mean_oni},
                    {"auc", det.auc},
                    {"ap", det.ap},
                    {"frechet", frechet_distance(train_b, test_b)},
                    {"mmd", mmd_rbf(train_b, test_b, h)},
                    {"vendi", vendi_score(test_b)}};

    if (cfg.output_dir) {
      nlohmann::json j{{"key", p.key},
                       {"dataset", cell.dataset},
                       {"level", cell.level},
                       {"augmentation", cell.augmentation},
                       {"detection_score", "s"},
                       {"metrics", cell.metrics},
                       {"plan", plan_to_json(plan)},
                       {"report", report_to_json(report)}};
      atomic_write_file(*cfg.output_dir / "cells" / detail::cell_file_name(cell), j.dump(1) + "\n");
    }
  });

  result.validate();
  return result;
}

// ---------------------------------------------------------------------------
// Sweep outputs

/// dataset,level,augmentation,metric,value
inline std::string sweep_long_csv(const SweepResult& sweep) {
  std::string out = "dataset,level,augmentation,metric,value\n";
  for (const auto& c : sweep.cells) {
    for (const auto& m : sweep_metrics()) {
      out += c.dataset + "," + format_double(c.level) + "," + c.augmentation + "," + m + "," +
             format_double(c.metrics.at(m)) + "\n";
    }
  }
  return out;
}

/// One row per cell, one column per metric; ct_score and auth_pct are
/// reserved and left empty.
inline std::string sweep_plot_csv(const SweepResult& sweep) {
  std::string out = "dataset,augmentation,level";
  for (const auto& m : sweep_metrics()) out += "," + m;
  out += ",ct_score,auth_pct\n";
  for (const auto& c : sweep.cells) {
    out += c.dataset + "," + c.augmentation + "," + format_double(c.level);
    for (const auto& m : sweep_metrics()) out += "," + format_double(c.metrics.at(m));
    out += ",,\n";
  }
  return out;
}

/// Spreads across augmentations, cross-dataset CVs and per-augmentation AUC.
///
/// The CV at a level uses each dataset's metric averaged over the
/// augmentation conditions. "min_auc" is the minimum over every dataset and
/// level of that augmentation.
inline nlohmann::json sweep_summary(const SweepResult& sweep) {
  nlohmann::json spreads = nlohmann::json::array();
  for (const auto& d : sweep.datasets) {
    for (double l : sweep.levels) {
      nlohmann::json row{{"dataset", d}, {"level", l}};
      for (const auto& m : sweep_metrics()) {
        row[m] = sweep.augmentations.size() >= 2 ? nlohmann::json(augmentation_spread(sweep, m, d, l)) : nlohmann::json();
      }
      if (sweep.augmentations.size() >= 2) {
        const double mi = row["mi_mean"].get<double>();
        const double fr = row["frechet"].get<double>();
        row["frechet_to_mi_spread_ratio"] = mi > 0.0 ? nlohmann::json(fr / mi) : nlohmann::json();
      }
      spreads.push_back(row);
    }
  }

  nlohmann::json cvs = nlohmann::json::array();
  if (sweep.datasets.size() >= 2) {
    for (double l : sweep.levels) {
      nlohmann::json row{{"level", l}};
      for (const auto& m : sweep_metrics()) {
        std::vector<double> per_ds;
        for (const auto& d : sweep.datasets) {
          double sum = 0.0;
          for (const auto& a : sweep.augmentations) sum += sweep.value(d, l, a, m);
          per_ds.push_back(sum / static_cast<double>(sweep.augmentations.size()));
        }
        try {
          row[m] = cross_dataset_cv(per_ds);
        } catch (const ValidationError&) {
          row[m] = nullptr;
        }
      }
      cvs.push_back(row);
    }
  }

  nlohmann::json auc = nlohmann::json::array();
  for (const auto& a : sweep.augmentations) {
    double sum = 0.0, mn = 1.0;
    std::size_t n = 0;
    for (const auto& d : sweep.datasets) {
      for (double l : sweep.levels) {
        const double v = sweep.value(d, l, a, "auc");
        sum += v;
        mn = std::min(mn, v);
        ++n;
      }
    }
    auc.push_back({{"augmentation", a}, {"mean_auc", sum / static_cast<double>(n)}, {"min_auc", mn}});
  }
  return {{"augmentation_spread", spreads}, {"cross_dataset_cv", cvs}, {"auc_by_augmentation", auc}};
}

inline void write_sweep_outputs(const fs::path& dir, const SweepResult& sweep) {
  atomic_write_file(dir / "sweep_long.csv", sweep_long_csv(sweep));
  atomic_write_file(dir / "plot_data.csv", sweep_plot_csv(sweep));
  atomic_write_file(dir / "summary.json", sweep_summary(sweep).dump(2) + "\n");
}

}  // namespace memaudit

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "memaudit/error.hpp"
#include "memaudit/similarity.hpp"

namespace memaudit {

inline constexpr double kAggregationEpsilon = 1e-6;

struct FusedScore {
  double s = 0.0;
  double d = 1.0;
};

/// Geometric mean of (s_k + eps) over layers, evaluated in log space.
/// Negative cosines are clamped to 0 first; the layer scores are assumed to
/// live in [0, 1].
inline FusedScore aggregate_scores(std::span<const double> per_layer,
                                   double epsilon = kAggregationEpsilon) {
  if (per_layer.empty()) throw ValidationError("aggregate_scores: no layers");
  double log_sum = 0.0;
  for (double v : per_layer) log_sum += std::log(std::max(v, 0.0) + epsilon);
  const double s = std::exp(log_sum / static_cast<double>(per_layer.size()));
  return {s, 1.0 - s};
}

struct Consensus {
  std::size_t count = 0;
  std::size_t neighbor = 0;
};

/// Size of the largest group of layers agreeing on one neighbor; ties go to
/// the lower neighbor index.
inline Consensus consensus_count(std::span<const std::size_t> neighbors) {
  if (neighbors.empty()) return {};
  std::map<std::size_t, std::size_t> votes;
  for (auto n : neighbors) ++votes[n];
  Consensus best;
  for (const auto& [idx, c] : votes) {  // ascending index, strict > keeps lowest
    if (c > best.count) best = {c, idx};
  }
  return best;
}

/// Per-sample fusion result.
struct AggregatedScore {
  double s = 0.0;
  double d = 1.0;
  std::vector<double> layer_scores;          // in layer order
  std::vector<std::size_t> layer_neighbors;  // in layer order
  Consensus consensus;
  bool degenerate = false;  // any layer had a zero whitened vector
};

struct AggregationResult {
  std::vector<int> layer_ids;
  std::vector<AggregatedScore> samples;
  std::size_t clamped_negatives = 0;
};

/// Fuses per-layer similarities (all over the same test rows).
inline AggregationResult aggregate_layers(const std::vector<LayerSimilarity>& layers,
                                          double epsilon = kAggregationEpsilon) {
  if (layers.empty()) throw ValidationError("aggregate_layers: no layers");
  const std::size_t n = layers.front().scores.size();
  for (const auto& l : layers) {
    if (l.scores.size() != n) throw ValidationError("aggregate_layers: layers disagree on sample count");
  }
  AggregationResult out;
  for (const auto& l : layers) out.layer_ids.push_back(l.layer_id);
  out.samples.resize(n);
  std::vector<double> buf(layers.size());
  std::vector<std::size_t> nbr(layers.size());
  for (std::size_t j = 0; j < n; ++j) {
    auto& a = out.samples[j];
    for (std::size_t k = 0; k < layers.size(); ++k) {
      buf[k] = layers[k].scores[j];
      nbr[k] = layers[k].neighbors[j];
      if (buf[k] < 0.0) ++out.clamped_negatives;
      if (!layers[k].degenerate.empty() && layers[k].degenerate[j]) a.degenerate = true;
    }
    const auto fused = aggregate_scores(buf, epsilon);
    a.s = fused.s;
    a.d = fused.d;
    a.layer_scores = buf;
    a.layer_neighbors = nbr;
    a.consensus = consensus_count(nbr);
  }
  return out;
}

}  // namespace memaudit

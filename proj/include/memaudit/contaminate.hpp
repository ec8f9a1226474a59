#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memaudit/augment.hpp"
#include "memaudit/error.hpp"
#include "memaudit/parallel.hpp"
#include "memaudit/rng.hpp"
#include "memaudit/tensorio.hpp"

namespace memaudit {

/// Which test positions were replaced, and by which (augmented) train image.
struct ContaminationPlan {
  double level = 0.0;
  AugmentationSpec augmentation;
  std::uint64_t seed = 0;
  std::vector<bool> labels;                    // per test index
  std::vector<std::size_t> positions;          // replaced test indices, draw order
  std::map<std::size_t, std::size_t> source_map;  // test index -> train index

  std::size_t n_injected() const { return positions.size(); }
};

inline std::size_t replacement_count(double level, std::size_t n_test) {
  return static_cast<std::size_t>(std::llround(level * static_cast<double>(n_test)));
}

/// Seed of the augmentation applied at one replaced test position. It does
/// not depend on the augmentation kind, so every condition perturbs the same
/// duplicate with the same stream.
inline std::uint64_t duplicate_seed(std::uint64_t seed, std::size_t position) {
  return derive_seed(seed, {0x617567ULL, position});
}

/// Draws the replaced positions and their sources. Both come from prefixes
/// of full permutations, so for a fixed seed the replaced set at a lower
/// level is contained in the set at any higher level.
inline ContaminationPlan plan_contamination(std::size_t n_train, std::size_t n_test, double level,
                                            const AugmentationSpec& aug, std::uint64_t seed) {
  if (!(level > 0.0 && level < 1.0)) {
    throw ValidationError("duplication level must lie in (0, 1), got " + format_double(level));
  }
  aug.validate();
  const std::size_t k = replacement_count(level, n_test);
  if (k == 0) throw ValidationError("duplication level " + format_double(level) + " replaces no test sample");
  if (k > n_test || k > n_train) {
    throw ValidationError("duplication level needs " + std::to_string(k) + " distinct sources, only " +
                          std::to_string(std::min(n_test, n_train)) + " available");
  }
  Rng rng(derive_seed(seed, {0x706c616eULL}));
  std::vector<std::size_t> pos(n_test), src(n_train);
  std::iota(pos.begin(), pos.end(), 0);
  std::iota(src.begin(), src.end(), 0);
  rng.shuffle(std::span(pos));
  rng.shuffle(std::span(src));

  ContaminationPlan plan;
  plan.level = level;
  plan.augmentation = aug;
  plan.seed = seed;
  plan.labels.assign(n_test, false);
  for (std::size_t i = 0; i < k; ++i) {
    plan.positions.push_back(pos[i]);
    plan.labels[pos[i]] = true;
    plan.source_map[pos[i]] = src[i];
  }
  return plan;
}

/// Replaces round(level * n_test) test images by augmented copies of
/// distinct train images. Unselected test images are copied unchanged.
inline std::pair<std::vector<ImageSlice>, ContaminationPlan> inject_duplicates(
    const std::vector<ImageSlice>& train_images, const std::vector<ImageSlice>& test_images,
    double level, const AugmentationSpec& aug, std::uint64_t seed, std::size_t threads = 1) {
  ContaminationPlan plan = plan_contamination(train_images.size(), test_images.size(), level, aug, seed);
  std::vector<ImageSlice> out = test_images;
  parallel_for(plan.positions.size(), threads, [&](std::size_t i) {
    const std::size_t p = plan.positions[i];
    out[p] = apply_augmentation(train_images[plan.source_map.at(p)], aug, duplicate_seed(seed, p));
  });
  return {std::move(out), std::move(plan)};
}

inline nlohmann::json plan_to_json(const ContaminationPlan& plan) {
  nlohmann::json src = nlohmann::json::array();
  for (auto p : plan.positions) src.push_back({{"test_index", p}, {"train_index", plan.source_map.at(p)}});
  return {{"level", plan.level},
          {"augmentation", to_tag(plan.augmentation)},
          {"seed", plan.seed},
          {"n_test", plan.labels.size()},
          {"n_injected", plan.n_injected()},
          {"labels", plan.labels},
          {"sources", src}};
}

inline ContaminationPlan plan_from_json(const nlohmann::json& j) {
  ContaminationPlan plan;
  try {
    plan.level = j.at("level").get<double>();
    plan.augmentation = parse_augmentation(j.at("augmentation").get<std::string>());
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.labels = j.at("labels").get<std::vector<bool>>();
    for (const auto& s : j.at("sources")) {
      const auto p = s.at("test_index").get<std::size_t>();
      plan.positions.push_back(p);
      plan.source_map[p] = s.at("train_index").get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("contamination plan: ") + e.what());
  }
  return plan;
}

}  // namespace memaudit

#include <set>

#include "test_util.hpp"

using namespace memaudit;

namespace {

struct Corpus {
  std::vector<ImageSlice> train, test;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    SyntheticConfig cfg;
    cfg.size = 16;
    const auto s = generate_synthetic(cfg);
    return Corpus{s.train, s.test};
  }();
  return c;
}

}  // namespace

TEST(Inject, FivePercentCleanCopies) {
  const auto& c = corpus();
  const auto [out, plan] = inject_duplicates(c.train, c.test, 0.05, clean_spec(), 42);
  EXPECT_EQ(plan.n_injected(), 5u);
  std::set<std::size_t> sources;
  std::size_t changed = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (plan.labels[i]) {
      EXPECT_EQ(out[i], c.train[plan.source_map.at(i)]);
      sources.insert(plan.source_map.at(i));
    } else {
      EXPECT_EQ(out[i], c.test[i]);
    }
    changed += out[i] != c.test[i];
  }
  EXPECT_EQ(sources.size(), 5u);
  EXPECT_EQ(changed, 5u);
}

TEST(Inject, CountsAndRounding) {
  const auto& c = corpus();
  EXPECT_EQ(plan_contamination(100, 100, 0.45, clean_spec(), 1).n_injected(), 45u);
  EXPECT_EQ(plan_contamination(100, 100, 0.30, clean_spec(), 1).n_injected(), 30u);
  EXPECT_EQ(replacement_count(0.15, 100), 15u);
  EXPECT_THROW(plan_contamination(100, 100, 1.5, clean_spec(), 1), ValidationError);
  EXPECT_THROW(plan_contamination(100, 100, 0.001, clean_spec(), 1), ValidationError);
  EXPECT_THROW(plan_contamination(10, 100, 0.45, clean_spec(), 1), ValidationError);
  (void)c;
}

TEST(Inject, DeterministicAndNested) {
  const auto a = plan_contamination(100, 100, 0.15, clean_spec(), 9);
  const auto b = plan_contamination(100, 100, 0.15, clean_spec(), 9);
  EXPECT_EQ(a.positions, b.positions);
  EXPECT_EQ(a.source_map, b.source_map);
  const auto big = plan_contamination(100, 100, 0.45, noise_spec(0.01), 9);
  for (auto p : a.positions) EXPECT_EQ(big.source_map.at(p), a.source_map.at(p));
}

TEST(Inject, AugmentedCopiesDiffer) {
  const auto& c = corpus();
  const auto [out, plan] = inject_duplicates(c.train, c.test, 0.3, flip_h_spec(), 3, 2);
  for (auto p : plan.positions) EXPECT_EQ(out[p], flip_h(c.train[plan.source_map.at(p)]));
  const auto [o1, p1] = inject_duplicates(c.train, c.test, 0.3, noise_spec(0.01), 3, 1);
  const auto [o4, p4] = inject_duplicates(c.train, c.test, 0.3, noise_spec(0.01), 3, 4);
  EXPECT_EQ(o1, o4);
}

TEST(Inject, PlanJsonRoundTrip) {
  const auto plan = plan_contamination(100, 100, 0.3, rotation_spec(3), 5);
  const auto back = plan_from_json(plan_to_json(plan));
  EXPECT_EQ(back.positions, plan.positions);
  EXPECT_EQ(back.source_map, plan.source_map);
  EXPECT_EQ(back.labels, plan.labels);
  EXPECT_EQ(back.augmentation, plan.augmentation);
}

TEST(Synthetic, DisjointDistinctDeterministic) {
  SyntheticConfig cfg;
  cfg.n = 40;
  cfg.size = 32;
  const auto a = generate_synthetic(cfg);
  const auto b = generate_synthetic(cfg);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.train.size(), 20u);
  EXPECT_EQ(a.test.size(), 20u);
  std::vector<ImageSlice> all = a.train;
  all.insert(all.end(), a.test.begin(), a.test.end());
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      double worst = 0.0;
      for (std::size_t k = 0; k < all[i].pixels.size(); ++k)
        worst = std::max(worst, std::abs(static_cast<double>(all[i].pixels[k]) - all[j].pixels[k]));
      EXPECT_GT(worst, 0.01);
    }
  }
  for (const auto& img : all) img.validate();
  cfg.seed = 43;
  EXPECT_NE(generate_synthetic(cfg).train[0], a.train[0]);
}

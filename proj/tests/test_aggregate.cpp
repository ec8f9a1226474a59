#include "test_util.hpp"

using namespace memaudit;

TEST(Aggregate, AllOnes) {
  const std::vector<double> v{1.0, 1.0, 1.0};
  const auto r = aggregate_scores(v);
  EXPECT_NEAR(r.s, 1.0, 3e-6);
  EXPECT_NEAR(r.d, 0.0, 3e-6);
}

TEST(Aggregate, ProductFormOracle) {
  const std::vector<double> v{0.5, 0.8, 0.9};
  const double oracle = std::cbrt(0.500001 * 0.800001 * 0.900001);
  EXPECT_NEAR(aggregate_scores(v).s, oracle, 1e-14);
  EXPECT_NEAR(aggregate_scores(v).s, 0.7114, 1e-4);
}

TEST(Aggregate, SingleZeroVetoes) {
  const std::vector<double> v{0.0, 1.0, 1.0};
  const double s = aggregate_scores(v).s;
  EXPECT_NEAR(s, std::cbrt(1e-6 * 1.000001 * 1.000001), 1e-15);
  EXPECT_NEAR(s, 0.01, 1e-5);
}

TEST(Aggregate, AtMostArithmeticMean) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> v{rng.uniform(), rng.uniform(), rng.uniform()};
    const double am = (v[0] + v[1] + v[2]) / 3.0 + 1e-6;
    EXPECT_LE(aggregate_scores(v).s, am + 1e-12);
  }
}

TEST(Aggregate, NegativeClampedAndCounted) {
  LayerSimilarity a{3, {-0.2, 0.5}, {0, 1}, {0, 0}};
  LayerSimilarity b{7, {0.5, 0.5}, {0, 1}, {0, 0}};
  const auto r = aggregate_layers({a, b});
  EXPECT_EQ(r.clamped_negatives, 1u);
  EXPECT_NEAR(r.samples[0].s, std::sqrt(1e-6 * 0.500001), 1e-15);
  EXPECT_EQ(r.samples[1].consensus.count, 2u);
  EXPECT_EQ(r.layer_ids, (std::vector<int>{3, 7}));
}

TEST(Aggregate, EmptyIsError) {
  EXPECT_THROW(aggregate_scores(std::vector<double>{}), ValidationError);
  EXPECT_THROW(aggregate_layers({}), ValidationError);
}

TEST(Consensus, Examples) {
  using V = std::vector<std::size_t>;
  EXPECT_EQ(consensus_count(V{17, 17, 17}).count, 3u);
  const auto two = consensus_count(V{17, 42, 17});
  EXPECT_EQ(two.count, 2u);
  EXPECT_EQ(two.neighbor, 17u);
  const auto one = consensus_count(V{1, 2, 3});
  EXPECT_EQ(one.count, 1u);
  EXPECT_EQ(one.neighbor, 1u);
  EXPECT_EQ(consensus_count(V{9, 4, 9, 4}).neighbor, 4u);
}

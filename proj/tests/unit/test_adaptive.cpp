#include <cmath>

#include <gtest/gtest.h>

#include "mrhbe/adaptive.hpp"
#include "mrhbe/error.hpp"
#include "mrhbe/oracle_bench.hpp"

using namespace mrhbe;

namespace {

Sampler constant(double c) {
  return [c](Rng&) { return c; };
}

// Exponential with mean mu: relative variance exactly 1.
Sampler exponential(double mu) {
  return [mu](Rng& r) { return -mu * std::log1p(-r.uniform()); };
}

}  // namespace

TEST(MedianOfMeans, ConstantSampler) {
  Rng rng(1);
  EXPECT_DOUBLE_EQ(median_of_means(constant(0.7), 5, 3, rng), 0.7);
}

TEST(MedianOfMeans, SingleGroupIsPlainMean) {
  Rng a(9), b(9);
  const Sampler s = [](Rng& r) { return r.uniform(); };
  double sum = 0.0;
  for (int i = 0; i < 50; ++i) sum += s(b);
  EXPECT_DOUBLE_EQ(median_of_means(s, 50, 1, a), sum / 50.0);
}

TEST(MedianOfMeans, BernoulliConcentrates) {
  Rng rng(2);
  const Sampler s = [](Rng& r) { return r.bernoulli(0.3) ? 1.0 : 0.0; };
  int inside = 0;
  for (int t = 0; t < 100; ++t) inside += std::abs(median_of_means(s, 1000, 9, rng) - 0.3) <= 0.05;
  EXPECT_GE(inside, 99);
}

TEST(MedianOfMeans, RejectsBadShape) {
  Rng rng(3);
  EXPECT_THROW(median_of_means(constant(1), 0, 3, rng), Error);
  EXPECT_THROW(median_of_means(constant(1), 4, 2, rng), Error);
}

TEST(AdaptiveConstants, GroupsAndPerGroup) {
  // 2⌈4.5·ln((log₂100 + 2)/0.1)⌉ + 1 = 2·21 + 1
  EXPECT_EQ(mom_groups(0.01, 0.1), 43u);
  EXPECT_EQ(mom_groups(1.0, 0.5), 2u * static_cast<std::size_t>(std::ceil(4.5 * std::log(4.0))) + 1);
  EXPECT_EQ(mom_per_group(1.0, 0.3), 100u);
  EXPECT_EQ(mom_per_group(0.0, 0.3), 1u);
}

TEST(AdaptiveConstants, GuessLevelsStopAtHalfTau) {
  const auto g = guess_levels(0.01);
  ASSERT_EQ(g.size(), 9u);
  EXPECT_DOUBLE_EQ(g.back(), 1.0 / 256.0);
  EXPECT_GT(g[g.size() - 2], 0.005);
  EXPECT_EQ(guess_levels(1.0), (std::vector<double>{1.0, 0.5}));
}

TEST(AdaptiveEstimate, DeterministicQuarter) {
  Rng rng(4);
  const QueryResult r = adaptive_estimate({constant(0.25), [](double) { return 0.0; }}, 0.3, 0.01, 0.1, rng);
  ASSERT_TRUE(r.is_estimate());
  EXPECT_DOUBLE_EQ(r.value, 0.25);
  ASSERT_EQ(r.levels.size(), 3u);
  EXPECT_DOUBLE_EQ(r.levels[2].guess, 0.25);
  EXPECT_TRUE(r.levels[2].accepted);
  EXPECT_FALSE(r.levels[1].accepted);
  EXPECT_EQ(r.samples_used, 3 * mom_groups(0.01, 0.1));
}

TEST(AdaptiveEstimate, ZeroSamplerIsBelowThreshold) {
  Rng rng(5);
  const QueryResult r = adaptive_estimate({constant(0.0), [](double) { return 0.0; }}, 0.3, 0.01, 0.1, rng);
  EXPECT_TRUE(r.below_threshold);
  EXPECT_EQ(r.levels.size(), guess_levels(0.01).size());
}

TEST(AdaptiveEstimate, FullDensityStopsAtFirstLevel) {
  Rng rng(6);
  const QueryResult r = adaptive_estimate({constant(1.0), [](double) { return 0.0; }}, 0.3, 1.0, 0.1, rng);
  ASSERT_TRUE(r.is_estimate());
  EXPECT_EQ(r.levels.size(), 1u);
}

TEST(AdaptiveEstimate, HalfGuessGuard) {
  // τ = 0.3: the last guess 0.125 accepts 0.14, which is below τ/2 = 0.15.
  Rng rng(7);
  const QueryResult r = adaptive_estimate({constant(0.14), [](double) { return 0.0; }}, 0.3, 0.3, 0.1, rng);
  EXPECT_TRUE(r.below_threshold);
  EXPECT_TRUE(r.levels.back().accepted);
}

TEST(AdaptiveEstimate, RejectsBadParameters) {
  Rng rng(8);
  const VBounded est{constant(1.0), [](double) { return 1.0; }};
  EXPECT_THROW(adaptive_estimate(est, 0.0, 0.1, 0.1, rng), Error);
  EXPECT_THROW(adaptive_estimate(est, 0.3, 0.0, 0.1, rng), Error);
  EXPECT_THROW(adaptive_estimate(est, 0.3, 0.1, 1.0, rng), Error);
  EXPECT_THROW(adaptive_estimate(VBounded{}, 0.3, 0.1, 0.1, rng), Error);
}

class AdaptiveContract : public ::testing::TestWithParam<double> {};

// Unit relative variance, so v ≡ 1 is a valid bound.
TEST_P(AdaptiveContract, WithinEpsilonAboveTau) {
  const double mu = GetParam();
  const double eps = 0.3, tau = mu / 2, chi = 0.1;
  Rng rng(10);
  int good = 0, below = 0;
  for (int t = 0; t < 100; ++t) {
    const QueryResult r = adaptive_estimate({exponential(mu), [](double) { return 1.0; }}, eps, tau, chi, rng);
    if (r.below_threshold) {
      ++below;
    } else {
      EXPECT_GE(r.value, tau / 2);
      good += std::abs(r.value - mu) <= eps * mu;
    }
  }
  EXPECT_GE(good, 90);
  EXPECT_LE(below, 10);
}

INSTANTIATE_TEST_SUITE_P(Means, AdaptiveContract, ::testing::Values(0.6, 0.2, 0.03));

TEST(AdaptiveEstimate, BelowThresholdForSparseMean) {
  Rng rng(11);
  const double tau = 0.1;
  int below = 0;
  for (int t = 0; t < 100; ++t) {
    below += adaptive_estimate({exponential(tau / 5), [](double) { return 1.0; }}, 0.3, tau, 0.1, rng).below_threshold;
  }
  EXPECT_GE(below, 90);
}

TEST(AdaptiveEstimate, SamplesShrinkWithDensity) {
  // v(μ) = μ^{−1/2}: denser queries accept earlier with cheaper levels.
  const auto v = [](double m) { return 1.0 / std::sqrt(m); };
  std::vector<double> used;
  for (double mu : {0.2, 0.05, 0.0125}) {
    Rng rng(12);
    double total = 0.0;
    for (int t = 0; t < 20; ++t) total += adaptive_estimate({exponential(mu), v}, 0.3, 0.01, 0.1, rng).samples_used;
    used.push_back(total / 20);
  }
  EXPECT_LT(used[0], used[1]);
  EXPECT_LT(used[1], used[2]);
}

// ---------------------------------------------------------------- structure

TEST(MainStructure, PlantedEstimates) {
  const ConvexPhi phi = builtin("gaussian", {.r2 = 2.0});
  const PlantedInstance inst = gen_planted(60, 4, 0.3, phi, 21);
  MainOptions o;
  o.eps = 0.5;
  o.tau = 0.15;
  o.chi = 0.3;
  o.pilot_draws = 100;
  Rng rng(22);
  const MainStructure m = MainStructure::build(phi, inst.dataset, o, rng);
  EXPECT_GT(m.kappa(), 0.0);
  const double gmin = guess_levels(o.tau).back();
  EXPECT_EQ(m.replicas(), mom_per_group(m.v_of(gmin), o.eps) * m.groups());
  // v(μ) nonincreasing and μ²v(μ) nondecreasing.
  EXPECT_GE(m.v_of(0.1), m.v_of(0.2));
  EXPECT_LE(0.01 * m.v_of(0.1), 0.04 * m.v_of(0.2));
  int good = 0;
  for (int t = 0; t < 3; ++t) {
    const QueryResult r = m.query(inst.query, rng);
    good += r.is_estimate() && std::abs(r.value - inst.achieved_mu) <= o.eps * inst.achieved_mu;
  }
  EXPECT_GE(good, 2);
}

TEST(MainStructure, TheoryBoundExceedsBudget) {
  const ConvexPhi phi = builtin("gaussian", {.r2 = 2.0});
  const PlantedInstance inst = gen_planted(40, 4, 0.3, phi, 23);
  MainOptions o;
  o.variance = VarianceSource::Theory;
  Rng rng(24);
  try {
    MainStructure::build(phi, inst.dataset, o, rng);
    FAIL() << "expected ReplicaBudgetExceeded";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ReplicaBudgetExceeded);
  }
}

TEST(MainStructure, FallbackKernelUsesUniformReplicas) {
  const ConvexPhi phi = builtin("gaussian", {.r2 = 1.0});
  const PlantedInstance inst = gen_planted(50, 4, 0.5, phi, 25);
  MainOptions o;
  o.eps = 0.5;
  o.tau = 0.25;
  o.chi = 0.3;
  o.variance = VarianceSource::Theory;
  Rng rng(26);
  const MainStructure m = MainStructure::build(phi, inst.dataset, o, rng);
  ASSERT_TRUE(m.bundle().config().fallback);
  EXPECT_DOUBLE_EQ(m.v_of(0.5), 2.0);
  int good = 0;
  for (int t = 0; t < 10; ++t) {
    const QueryResult r = m.query(inst.query, rng);
    good += r.is_estimate() && std::abs(r.value - inst.achieved_mu) <= o.eps * inst.achieved_mu;
  }
  EXPECT_GE(good, 8);
}

TEST(MainStructure, RejectsBadInput) {
  const ConvexPhi phi = builtin("gaussian", {.r2 = 2.0});
  Rng rng(27);
  MainOptions o;
  EXPECT_THROW(MainStructure::build(phi, Dataset(3, {}), o, rng), Error);
  o.eps = 1.5;
  EXPECT_THROW(MainStructure::build(phi, Dataset(2, {1.0, 0.0}), o, rng), Error);
  EXPECT_THROW(parse_variance_source("guess"), Error);
  EXPECT_EQ(parse_variance_source("pilot"), VarianceSource::Pilot);
}

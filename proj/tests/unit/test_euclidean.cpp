#include <cmath>

#include <gtest/gtest.h>

#include "mrhbe/error.hpp"
#include "mrhbe/euclidean.hpp"

using namespace mrhbe;

namespace {

// Random directions with norms uniform in [lo, hi].
std::vector<double> random_point(std::size_t d, double lo, double hi, Rng& rng) {
  std::vector<double> x(d);
  for (double& v : x) v = rng.normal();
  const double s = (lo + (hi - lo) * rng.uniform()) / norm(x);
  for (double& v : x) v *= s;
  return x;
}

Dataset random_shell_data(std::size_t n, std::size_t d, double lo, double hi, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> raw;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = random_point(d, lo, hi, rng);
    raw.insert(raw.end(), x.begin(), x.end());
  }
  return Dataset(d, std::move(raw));
}

// e^{−‖x−y‖²/2} up to a factor depending only on y: p0(r) = e^{−r²/2}, φ(s) = s.
struct GaussianSetup {
  ConvexPhi phi;
  LogLipschitzP0 p0;
};
GaussianSetup gaussian(double R) {
  return {builtin("exp-inner", {.r2 = 1.0, .domain = R * R}), p0_pow_exp(0.0, "neg-half-square", R)};
}

}  // namespace

TEST(Partition, Constants) {
  EXPECT_DOUBLE_EQ(gamma_star(1.0, 0.0, 1.0, 1.0), 0.25);
  EXPECT_DOUBLE_EQ(gamma_star(0.0, 0.0, 0.1, 1.0), 1.0);
  const AnnulusPartition p = make_partition(1.0, 4.0, 1.0);
  EXPECT_EQ(p.k_star, 2u);
  for (std::size_t i = 1; i < p.radii.size(); ++i) EXPECT_LT(p.radii[i - 1], p.radii[i]);
  EXPECT_GE(p.radii.back(), p.R);
  EXPECT_EQ(p.index_of(4.0), p.annuli());
  EXPECT_THROW(make_partition(2.0, 1.0, 0.5), Error);
  EXPECT_THROW(make_partition(1.0, 2.0, 1.5), Error);
}

TEST(Partition, TruncateExamples) {
  const AnnulusPartition p = make_partition(1.0, 4.0, 1.0);
  const std::vector<double> x{0.0, 3.0};
  const Truncated t = truncate(x, p);
  EXPECT_EQ(t.annulus, 2u);
  EXPECT_NEAR(norm(t.point), 2.0, 1e-12);
  const std::vector<double> inner_edge{0.6, 0.8};
  EXPECT_EQ(truncate(inner_edge, p).point, inner_edge);
  const std::vector<double> outside{0.0, 4.5};
  EXPECT_THROW(truncate(outside, p), Error);
}

TEST(Partition, TruncationShrinksByLessThanOnePlusGamma) {
  const AnnulusPartition p = make_partition(1.0, 4.0, 1.0 / 64);
  Rng rng(1);
  for (int s = 0; s < 10000; ++s) {
    const auto x = random_point(5, 1.0, 4.0, rng);
    const Truncated t = truncate(x, p);
    const double ratio = norm(x) / norm(t.point);
    ASSERT_GE(ratio, 1.0 - 1e-12);
    ASSERT_LT(ratio, 1.0 + p.gamma);
    ASSERT_NEAR(norm(t.point), p.radius(t.annulus), 1e-9);
  }
}

TEST(RatioBounds, EnvelopeHoldsOnRandomPairs) {
  const double R = 4.0;
  const auto [phi, p0] = gaussian(R);
  const AnnulusPartition p = make_partition(1.0, R, gamma_star(p0.q, p0.H, R, phi.lipschitz()));
  const auto w = [&](std::span<const double> x, std::span<const double> y) {
    return std::log(p0(norm(x))) + phi(dot(x, y));
  };
  Rng rng(2);
  for (int s = 0; s < 10000; ++s) {
    const auto x = random_point(5, 1.0, R, rng);
    const auto y = random_point(5, 1.0, R, rng);
    const auto [lo, hi] = ratio_bounds(x, y, p, phi, p0);
    ASSERT_LE(hi, std::exp(1.0) * (1 + 1e-12));
    ASSERT_GE(lo, std::exp(-1.0) * (1 - 1e-12));
    const double log_ratio = w(truncate(x, p).point, truncate(y, p).point) - w(x, y);
    ASSERT_GE(log_ratio, std::log(lo) - 1e-12);
    ASSERT_LE(log_ratio, std::log(hi) + 1e-12);
  }
}

TEST(RatioBounds, BoundaryPointsGiveUnitRatio) {
  const auto [phi, p0] = gaussian(4.0);
  const AnnulusPartition p = make_partition(1.0, 4.0, 0.5);
  const std::vector<double> x{1.5, 0.0}, y{0.0, -2.25};
  EXPECT_EQ(truncate(x, p).point, x);
  EXPECT_EQ(truncate(y, p).point, y);
  const auto [lo, hi] = ratio_bounds(x, y, p, phi, p0);
  EXPECT_LE(lo, 1.0);
  EXPECT_GE(hi, 1.0);
}

TEST(P0, BuiltinsPassAudit) {
  for (const char* s : {"const", "pow:2", "pow:-1.5", "pow-exp:1,neg-linear", "pow-exp:0,neg-half-square",
                        "pow-exp:2,neg-square", "pow-exp:1,zero"}) {
    EXPECT_TRUE(audit_p0(parse_p0(s, 3.0), 3.0).passed()) << s;
  }
  EXPECT_THROW(parse_p0("pow", 1.0), Error);
  EXPECT_THROW(parse_p0("pow-exp:1,neg-cube", 1.0), Error);
  EXPECT_THROW(parse_p0("gauss", 1.0), Error);
}

TEST(P0, AuditRejectsUnderstatedConstants) {
  LogLipschitzP0 bad = p0_pow(3.0);
  bad.q = 1.0;
  EXPECT_FALSE(audit_p0(bad, 2.0).passed());
  const auto [phi, p0] = gaussian(2.0);
  try {
    EuclideanEstimator::build(phi, bad, random_shell_data(20, 3, 1.0, 2.0, 3), {}, 4);
    FAIL() << "expected BadParams";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadParams);
  }
}

TEST(Euclidean, BuildRejectsBadInput) {
  const auto [phi, p0] = gaussian(2.0);
  EXPECT_THROW(EuclideanEstimator::build(phi, p0, Dataset(3, {}), {}, 1), Error);
  EXPECT_THROW(EuclideanEstimator::build(phi, p0, Dataset(2, {0.0, 0.0, 1.0, 0.0}), {}, 1), Error);
  // φ defined on [−4, 4] only; norms up to 3 need [−9, 9].
  try {
    EuclideanEstimator::build(phi, p0, Dataset(2, {3.0, 0.0, 1.0, 0.0}), {}, 1);
    FAIL() << "expected DomainExceeded";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DomainExceeded);
  }
}

TEST(Euclidean, PartitionCoversData) {
  const auto [phi, p0] = gaussian(2.0);
  const Dataset ds = random_shell_data(150, 4, 1.0, 2.0, 5);
  const EuclideanEstimator est = EuclideanEstimator::build(phi, p0, ds, {}, 6);
  std::vector<int> seen(ds.size(), 0);
  for (std::size_t i = 1; i <= est.partition().annuli(); ++i) {
    for (std::size_t k : est.members(i)) {
      ++seen[k];
      const double r = norm(ds.row(k));
      EXPECT_GE(r, est.partition().radius(i));
      EXPECT_LT(r, est.partition().radius(i + 1));
    }
  }
  for (int c : seen) EXPECT_EQ(c, 1);
  EXPECT_EQ(est.built_pairs(), 0u);
  for (std::size_t i = 1; i <= est.partition().annuli(); ++i) {
    for (std::size_t j = 1; j <= est.partition().annuli(); ++j) {
      if (est.members(i).empty()) continue;
      const double a = est.a_coef(i, j);
      EXPECT_GT(a, 0.0);
      EXPECT_LE(a, 1.0 + 1e-12);
    }
  }
}

TEST(Euclidean, DecompositionSandwich) {
  const auto [phi, p0] = gaussian(2.0);
  const Dataset ds = random_shell_data(400, 4, 1.0, 2.0, 7);
  const EuclideanEstimator est = EuclideanEstimator::build(phi, p0, ds, {}, 8);
  Rng rng(9);
  for (int q = 0; q < 20; ++q) {
    const auto y = random_point(4, 1.1, 1.9, rng);
    const std::size_t j = est.partition().index_of(norm(y));
    double sum = 0.0;
    for (std::size_t i = 1; i <= est.partition().annuli(); ++i) {
      if (!est.members(i).empty()) sum += est.a_coef(i, j) * est.mu_ij(i, y);
    }
    const double mu = est.exact_mu(y);
    EXPECT_LE(std::exp(-1.0) * sum, mu);
    EXPECT_LE(mu, std::exp(1.0) * sum);
  }
}

TEST(Euclidean, EagerBuildCoversQueryShells) {
  const auto [phi, p0] = gaussian(2.0);
  const Dataset ds = random_shell_data(60, 3, 1.0, 2.0, 10);
  EuclideanOptions o;
  o.query_norms = {1.5, 2.0};
  o.threads = 2;
  const EuclideanEstimator est = EuclideanEstimator::build(phi, p0, ds, o, 11);
  const AnnulusPartition& p = est.partition();
  std::size_t nonempty = 0;
  for (std::size_t i = 1; i <= p.annuli(); ++i) nonempty += !est.members(i).empty();
  EXPECT_EQ(est.built_pairs(), nonempty * (p.index_of(2.0) - p.index_of(1.5) + 1));
}

TEST(Euclidean, SingleAnnulusMatchesSphereDraw) {
  // Every norm is 1.5: one shell, p0 ≡ 1, kernel φ(2.25ρ).
  const double R = 1.5;
  const ConvexPhi phi = builtin("gaussian", {.r2 = 1.0, .domain = R * R});
  Rng gen(12);
  std::vector<double> raw;
  for (int i = 0; i < 80; ++i) {
    const auto x = random_point(4, R, R, gen);
    raw.insert(raw.end(), x.begin(), x.end());
  }
  const EuclideanEstimator est = EuclideanEstimator::build(phi, p0_const(), Dataset(4, std::move(raw)), {}, 13);
  ASSERT_EQ(est.partition().annuli(), 1u);
  const std::vector<double> y = random_point(4, R, R, gen);
  std::vector<double> yhat = y;
  for (double& v : yhat) v /= R;
  const MrHbeState& s = est.pair(1, 1);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng a(seed), b(seed);
    const double euc = draw_euclidean(est, y, a);
    const double sph = draw(s, yhat, b).value;
    EXPECT_NEAR(euc, sph, 1e-12 * std::max(1.0, sph));
  }
}

TEST(Euclidean, UnbiasedWithFreshTables) {
  const auto [phi, p0] = gaussian(2.0);
  const Dataset ds = random_shell_data(100, 4, 1.0, 2.0, 14);
  const EuclideanEstimator est = EuclideanEstimator::build(phi, p0, ds, {}, 15);
  Rng rng(16);
  const std::vector<double> y = random_point(4, 1.1, 1.9, rng);
  const double mu = est.exact_mu(y);
  constexpr int kDraws = 2000;
  double s = 0.0, s2 = 0.0;
  for (int t = 0; t < kDraws; ++t) {
    const double z = draw_euclidean(est, y, rng, true);
    s += z;
    s2 += z * z;
  }
  const double mean = s / kDraws;
  const double se = std::sqrt((s2 / kDraws - mean * mean) / kDraws);
  EXPECT_LE(std::abs(mean - mu), 3.0 * se) << "mean " << mean << " mu " << mu << " se " << se;
}

TEST(Euclidean, QueryOutsideRangeThrows) {
  const auto [phi, p0] = gaussian(2.0);
  const EuclideanEstimator est = EuclideanEstimator::build(phi, p0, random_shell_data(30, 3, 1.0, 2.0, 17), {}, 18);
  Rng rng(19);
  const std::vector<double> far{0.0, 0.0, 5.0}, wrong_dim{1.0, 1.0};
  EXPECT_THROW(draw_euclidean(est, far, rng), Error);
  EXPECT_THROW(draw_euclidean(est, wrong_dim, rng), Error);
}

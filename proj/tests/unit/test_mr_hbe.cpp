#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "mrhbe/error.hpp"
#include "mrhbe/mr_hbe.hpp"

using namespace mrhbe;

namespace {

// Unit points around y: a tight cluster plus a diffuse cloud.
Dataset clustered(std::size_t n, std::size_t d, std::span<const double> y, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> raw(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double spread = rng.uniform() < 0.15 ? 0.15 : 1.0;
    for (std::size_t j = 0; j < d; ++j) raw[i * d + j] = y[j] + spread * rng.normal() / 2.0;
  }
  return Dataset(d, std::move(raw)).normalized();
}

UnitPoint random_unit(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.normal();
  return normalize(v);
}

double brute_mu(const ConvexPhi& phi, const Dataset& ds, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) s += std::exp(phi(inner(ds.row(i), y)) - phi.phi_max());
  return s / static_cast<double>(ds.size());
}

}  // namespace

TEST(ScaleFreeConfig, GaussianR2Two) {
  const ConvexPhi phi = builtin("gaussian", {.r2 = 2.0});
  const ScaleFreeConfig c = scale_free_config(phi, 0.5, 0.25);
  // δ* = 1/(2βL) = 1/(2·0.5·4)
  EXPECT_DOUBLE_EQ(c.delta_star, 0.25);
  EXPECT_EQ(c.k_star, 1u);
  EXPECT_NEAR(c.c_star, 1.5658881816856075e7, 1e-3);
  EXPECT_NEAR(c.log_m_phi, 2.0 * std::log(c.c_star), 1e-12);
  EXPECT_FALSE(c.fallback);
  EXPECT_DOUBLE_EQ(c.smoothed_lipschitz(), 2.0);
}

TEST(ScaleFreeConfig, PowerGrowsWithLipschitz) {
  const ScaleFreeConfig c = scale_free_config(builtin("gaussian", {.r2 = 8.0}), 0.5);
  const double expect = std::ceil(std::cbrt(2 * 0.25 * 16 * 32 / std::log(c.c_star)));
  EXPECT_EQ(c.k_star, static_cast<unsigned>(expect));
  EXPECT_GE(c.k_star, 2u);
  EXPECT_NEAR(c.log_m_phi, 2.0 * c.k_star * std::log(collision_constant_c1(c.delta_star, 0.25)), 1e-9);
}

TEST(ScaleFreeConfig, FallbackForSmallLipschitz) {
  EXPECT_TRUE(scale_free_config(builtin("gaussian", {.r2 = 1.0}), 0.5).fallback);
  EXPECT_TRUE(scale_free_config(builtin("gaussian", {.r2 = 3.0}), 0.5).fallback);
  EXPECT_THROW(scale_free_config(builtin("gaussian"), 0.0), Error);
}

TEST(SchemeBundle, AnchorsAndWeightsPartitionUnity) {
  const auto b = SchemeBundle::build(builtin("gaussian", {.r2 = 2.0}), 8, {});
  ASSERT_GE(b->size(), 3u);
  EXPECT_EQ(b->anchors().front().local.side, -1);
  EXPECT_EQ(b->anchors().back().local.side, +1);
  std::vector<double> lps(b->size());
  for (double rho = -1.0; rho <= 1.0; rho += 0.01) {
    b->log_probs(rho, lps);
    double top = -INFINITY;
    for (double l : lps) top = std::max(top, 2 * l);
    ASSERT_GT(top, -INFINITY);
    double w = 0.0;
    for (double l : lps) w += std::exp(2 * l - top);
    double sum = 0.0;
    for (double l : lps) sum += std::exp(2 * l - top) / w;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(SchemeBundle, ExactProbabilitiesTrackHalfPhi) {
  // Scale-free fidelity with the closed-form probabilities in place of Monte Carlo.
  const ConvexPhi phi = builtin("gaussian", {.r2 = 2.0});
  const auto b = SchemeBundle::build(phi, 8, {});
  const ScaleFreeConfig& c = b->config();
  std::vector<double> lps(b->size());
  for (int i = 0; i <= 20; ++i) {
    const double rho = -1.0 + 0.1 * i;
    b->log_probs(rho, lps);
    const double sup = *std::max_element(lps.begin(), lps.end());
    EXPECT_LE(std::abs(sup - 0.5 * (phi(rho) - c.phi_max)), 2.0 * c.k_star * std::log(c.c_star)) << rho;
  }
}

TEST(SchemeBundle, ModesAgreeRoughly) {
  const ConvexPhi phi = builtin("gaussian", {.r2 = 2.0});
  BuildOptions mc;
  mc.mode = WeightMode::Mc;
  mc.mc.grid = 21;
  mc.mc.trials = 20000;
  const auto exact = SchemeBundle::build(phi, 4, {});
  const auto table = SchemeBundle::build(phi, 4, mc);
  BuildOptions ideal;
  ideal.mode = WeightMode::Ideal;
  const auto idl = SchemeBundle::build(phi, 4, ideal);
  ASSERT_EQ(exact->size(), table->size());
  for (std::size_t t = 0; t < exact->size(); ++t) {
    for (double rho : {-0.5, 0.0, 0.5, 0.9}) {
      const double pe = std::exp(exact->log_prob(t, rho));
      const double pm = std::exp(table->log_prob(t, rho));
      // Grid nodes: Monte Carlo noise only.
      EXPECT_NEAR(pm, pe, 5.0 * std::sqrt(pe * (1 - pe) / 20000) + 1e-4) << t << " " << rho;
      EXPECT_TRUE(std::isfinite(idl->log_prob(t, rho)) || idl->log_prob(t, rho) == -INFINITY);
    }
  }
  EXPECT_EQ(parse_weight_mode("mc"), WeightMode::Mc);
  EXPECT_THROW(parse_weight_mode("bogus"), Error);
}

TEST(MrHbeState, TablesPartitionData) {
  Rng rng(3);
  const UnitPoint y = random_unit(8, rng);
  const Dataset ds = clustered(100, 8, y.coords(), 11);
  const MrHbeState s = MrHbeState::build(builtin("gaussian", {.r2 = 2.0}), ds, 99);
  ASSERT_TRUE(s.has_tables());
  for (std::size_t t = 0; t < s.tables().size(); ++t) {
    std::vector<int> seen(ds.size(), 0);
    for (auto i : s.tables()[t].points) ++seen[i];
    for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(seen[i], s.admitted(t, i) ? 1 : 0) << t << " " << i;
    if (s.bundle().anchors()[t].log_gate == 0.0) {
      for (int v : seen) EXPECT_EQ(v, 1);
    }
  }
}

TEST(HashTable, FindReturnsContiguousBucket) {
  // Rows (2,1) (1,5) (2,1) (0,0) for points 10..13.
  const HashTable h = HashTable::from_keys(2, {2, 1, 1, 5, 2, 1, 0, 0}, {10, 11, 12, 13});
  EXPECT_EQ(h.bucket_count(), 3u);
  const std::vector<std::uint32_t> k21{2, 1}, k15{1, 5}, k99{9, 9}, k00{0, 0};
  const auto b = h.find(k21);
  EXPECT_EQ(std::vector<std::uint32_t>(b.begin(), b.end()), (std::vector<std::uint32_t>{10, 12}));
  EXPECT_EQ(h.find(k15).size(), 1u);
  EXPECT_EQ(h.find(k00).front(), 13u);
  EXPECT_TRUE(h.find(k99).empty());
  const std::vector<std::uint32_t> narrow{2};
  EXPECT_THROW(h.find(narrow), Error);
  EXPECT_THROW(HashTable::from_keys(2, {1, 2, 3}, {0, 1}), Error);
}

TEST(MrHbeState, OnDemandBucketsMatchTables) {
  Rng rng(4);
  const UnitPoint y0 = random_unit(6, rng);
  const Dataset ds = clustered(150, 6, y0.coords(), 12);
  const MrHbeState eager = MrHbeState::build(builtin("gaussian", {.r2 = 8.0}), ds, 1234);
  const MrHbeState lazy = eager.replica(1234, false);
  ASSERT_FALSE(lazy.has_tables());
  std::vector<std::uint32_t> a, b;
  for (int q = 0; q < 30; ++q) {
    const UnitPoint y = q % 2 ? random_unit(6, rng) : y0;
    for (std::size_t t = 0; t < eager.bundle().size(); ++t) {
      eager.bucket(t, y.coords(), a);
      lazy.bucket(t, y.coords(), b);
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      ASSERT_EQ(a, b) << "query " << q << " anchor " << t;
    }
  }
}

TEST(MrHbeState, Errors) {
  const MrHbeState none;
  Rng rng(1);
  const std::vector<double> y{1.0, 0.0};
  EXPECT_THROW(
      {
        try {
          draw(none, y, rng);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::NotBuilt);
          throw;
        }
      },
      Error);
  EXPECT_THROW(MrHbeState::build(builtin("gaussian", {.r2 = 2.0}), Dataset(), 1), Error);
  EXPECT_THROW(MrHbeState::build(builtin("gaussian", {.r2 = 2.0}), Dataset(2, {3.0, 0.0}), 1), Error);
  BuildOptions tight;
  tight.cap_budget = 64;
  EXPECT_THROW(MrHbeState::build(builtin("gaussian", {.r2 = 2.0}), Dataset(2, {1.0, 0.0}), 1, tight), Error);
}

TEST(Draw, DiagnosticsAreConsistent) {
  Rng rng(5);
  const UnitPoint y = random_unit(8, rng);
  const Dataset ds = clustered(80, 8, y.coords(), 13);
  const MrHbeState s = MrHbeState::build(builtin("gaussian", {.r2 = 2.0}), ds, 5);
  std::vector<double> lps(s.bundle().size());
  for (int k = 0; k < 200; ++k) {
    const EstimateSample z = draw_fresh(s, y.coords(), rng);
    ASSERT_GE(z.value, 0.0);
    double total = 0.0;
    bool any = false;
    for (std::size_t t = 0; t < z.per_anchor.size(); ++t) {
      const AnchorTerm& a = z.per_anchor[t];
      total += a.term;
      if (a.index < 0) {
        EXPECT_EQ(a.term, 0.0);
        continue;
      }
      any = true;
      const double rho = inner(ds.row(static_cast<std::size_t>(a.index)), y.coords());
      s.bundle().log_probs(rho, lps);
      double w = 0.0;
      for (double l : lps) w += std::exp(2 * l);
      EXPECT_NEAR(a.weight, std::exp(lps[t]) / w, 1e-9 * a.weight);
      EXPECT_NEAR(a.term, a.weight * static_cast<double>(a.bucket_size) * s.bundle().weight(rho), 1e-12);
    }
    EXPECT_NEAR(z.value, total / 80.0, 1e-15);
    if (!any) EXPECT_EQ(z.value, 0.0);
  }
}

class Unbiased : public ::testing::TestWithParam<double> {};

TEST_P(Unbiased, FreshTableMeanMatchesOracle) {
  const double r2 = GetParam();
  Rng rng(21);
  const UnitPoint y = random_unit(8, rng);
  const Dataset ds = clustered(50, 8, y.coords(), 22);
  const ConvexPhi phi = builtin("gaussian", {.r2 = r2});
  BuildOptions lazy;
  lazy.eager_tables = false;
  const MrHbeState s = MrHbeState::build(phi, ds, 8, lazy);
  const Moments m = empirical_moments(s, y.coords(), 3000, rng, true);
  const double mu = brute_mu(phi, ds, y.coords());
  EXPECT_LE(std::abs(m.mean - mu), 3.0 * m.stderr_) << "mu=" << mu << " mean=" << m.mean;
  EXPECT_LE(m.second, relvar_bound(0.5, s.bundle().config().log_m_phi, mu).second_moment);
}

// r² = 1 and 3 exercise the uniform fallback.
INSTANTIATE_TEST_SUITE_P(Gaussian, Unbiased, ::testing::Values(1.0, 2.0, 3.0, 8.0));

TEST(Draw, IdenticalPointsGiveExactMean) {
  Rng rng(6);
  const UnitPoint y = random_unit(5, rng);
  Dataset ds;
  for (int i = 0; i < 20; ++i) ds.push_back(y.coords());
  const MrHbeState s = MrHbeState::build(builtin("gaussian", {.r2 = 2.0}), ds, 3);
  const Moments m = empirical_moments(s, y.coords(), 400, rng, true);
  EXPECT_LE(std::abs(m.mean - 1.0), 3.0 * m.stderr_ + 1e-12);
}

TEST(DrawVector, ScalarEmbeddingIsBitIdentical) {
  Rng data(7);
  const UnitPoint y = random_unit(8, data);
  const Dataset ds = clustered(60, 8, y.coords(), 23);
  const MrHbeState s = MrHbeState::build(builtin("gaussian", {.r2 = 2.0}), ds, 17);
  const SchemeBundle& b = s.bundle();
  const VectorFn scalar = [&](std::span<const double> x, std::span<const double> q) {
    return std::vector<double>{b.weight(inner(x, q))};
  };
  for (bool fresh : {false, true}) {
    Rng r1(100), r2(100);
    for (int k = 0; k < 50; ++k) {
      const double a = fresh ? draw_fresh(s, y.coords(), r1).value : draw(s, y.coords(), r1).value;
      const std::vector<double> v = draw_vector(s, y.coords(), scalar, r2, fresh);
      ASSERT_EQ(v.size(), 1u);
      ASSERT_EQ(a, v[0]);
    }
  }
}

TEST(DrawVector, DirectionWeightedMeanMatchesOracle) {
  Rng rng(8);
  const UnitPoint y = random_unit(4, rng);
  const Dataset ds = clustered(20, 4, y.coords(), 24);
  const ConvexPhi phi = builtin("gaussian", {.r2 = 2.0});
  BuildOptions lazy;
  lazy.eager_tables = false;
  const MrHbeState s = MrHbeState::build(phi, ds, 9, lazy);
  const VectorFn g = [&](std::span<const double> x, std::span<const double> q) {
    const double w = s.bundle().weight(inner(x, q));
    return std::vector<double>{w * x[0], w * x[1], w * x[2], w * x[3]};
  };
  std::vector<double> truth(4, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto v = g(ds.row(i), y.coords());
    for (int j = 0; j < 4; ++j) truth[j] += v[j] / 20.0;
  }
  const int draws = 4000;
  std::vector<double> mean(4, 0.0), sq(4, 0.0);
  for (int k = 0; k < draws; ++k) {
    const auto v = draw_vector(s, y.coords(), g, rng, true);
    for (int j = 0; j < 4; ++j) {
      mean[j] += v[j] / draws;
      sq[j] += v[j] * v[j] / draws;
    }
  }
  for (int j = 0; j < 4; ++j) {
    const double se = std::sqrt((sq[j] - mean[j] * mean[j]) / (draws - 1));
    EXPECT_LE(std::abs(mean[j] - truth[j]), 3.5 * se + 1e-12) << j;
  }
}

TEST(DrawVector, NormMismatchDetected) {
  Rng rng(9);
  const UnitPoint y = random_unit(4, rng);
  Dataset ds;
  for (int i = 0; i < 10; ++i) ds.push_back(y.coords());
  const MrHbeState s = MrHbeState::build(builtin("gaussian", {.r2 = 2.0}), ds, 2);
  const VectorFn bad = [](std::span<const double>, std::span<const double>) { return std::vector<double>{0.5, 0.5}; };
  EXPECT_THROW(
      {
        try {
          for (int k = 0; k < 50; ++k) draw_vector(s, y.coords(), bad, rng, true);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::NormMismatch);
          throw;
        }
      },
      Error);
}

TEST(RelvarBound, Values) {
  EXPECT_DOUBLE_EQ(relvar_bound(0.5, 0.0, 1.0).second_moment, 17.0);
  EXPECT_DOUBLE_EQ(relvar_bound(0.5, 0.0, 1.0).relvar, 16.0);
  const double logm = std::log(3.0);
  for (double beta : {0.2, 0.5, 0.9}) EXPECT_NEAR(relvar_bound(beta, logm, 1.0).second_moment, 16 * 27 + 1, 1e-9);
  for (double mu : {0.5, 0.1, 0.01}) {
    const double at_half = relvar_bound(0.5, logm, mu).second_moment;
    for (int i = 1; i <= 9; ++i) EXPECT_LE(at_half, relvar_bound(0.1 * i, logm, mu).second_moment * (1 + 1e-12));
  }
  EXPECT_THROW(relvar_bound(0.5, 0.0, 0.0), Error);
}

TEST(Persistence, RoundTrip) {
  Rng rng(10);
  const UnitPoint y = random_unit(8, rng);
  const Dataset ds = clustered(70, 8, y.coords(), 25);
  const KernelSpec spec{.name = "gaussian", .params = {.r2 = 2.0}, .custom = ""};
  const MrHbeState s = MrHbeState::build(spec, ds, 77);
  const auto path = std::filesystem::temp_directory_path() / "mrhbe_state_roundtrip.bin";
  save_state(s, path);
  const MrHbeState t = load_state(path);
  std::filesystem::remove(path);
  ASSERT_EQ(t.tables().size(), s.tables().size());
  for (std::size_t i = 0; i < s.tables().size(); ++i) EXPECT_EQ(t.tables()[i], s.tables()[i]);
  EXPECT_EQ(t.dataset(), s.dataset());
  Rng r1(5), r2(5);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(draw(s, y.coords(), r1).value, draw(t, y.coords(), r2).value);
  // A state without a spec cannot be saved.
  const MrHbeState anon = MrHbeState::build(builtin("gaussian", {.r2 = 2.0}), ds, 1);
  EXPECT_THROW(save_state(anon, path), Error);
}

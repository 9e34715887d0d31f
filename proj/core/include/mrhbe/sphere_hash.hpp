#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mrhbe/core_data.hpp"
#include "mrhbe/rng.hpp"

namespace mrhbe {

inline constexpr std::uint64_t kDefaultCapBudget = std::uint64_t{1} << 26;
inline constexpr double kDefaultZeta = 0.25;
// Banks with m·d above this many doubles are generated row by row on demand.
inline constexpr std::size_t kDefaultMaterializeBudget = std::size_t{1} << 20;

// m(t,ζ) = ⌈√(2π)(t+1)·ln(2/ζ)·e^{t²/2}⌉.
std::uint64_t caps_count(double t, double zeta, std::uint64_t m_max = kDefaultCapBudget);

enum class Side { Plus, Minus };

// m i.i.d. N(0, I_d) rows. Rows are a pure function of (seed, row index), so
// a lazy bank and a materialized bank with the same seed are the same bank.
class GaussianBank {
 public:
  GaussianBank(std::uint64_t seed, std::size_t m, std::size_t d, bool materialize);
  // Explicit rows (tests and hand-built schemes); row-major m×d.
  static GaussianBank from_rows(std::size_t d, std::vector<double> rows);

  std::size_t rows() const noexcept { return m_; }
  std::size_t dim() const noexcept { return d_; }
  std::uint64_t seed() const noexcept { return seed_; }
  bool materialized() const noexcept { return !data_.empty() || m_ == 0; }

  // Pointer to row i (0-based); `scratch` must hold d doubles and is used
  // when the bank is lazy.
  const double* row(std::size_t i, double* scratch) const noexcept;

 private:
  GaussianBank() = default;
  std::uint64_t seed_ = 0;
  std::size_t m_ = 0;
  std::size_t d_ = 0;
  std::vector<double> data_;
};

// One D₊ or D₋ component. Dataset points use h (⟨x,g_i⟩ ≥ t, sentinel m+1);
// queries use g (⟨y,g_i⟩ ≥ t on the plus side, ≤ −t on the minus side,
// sentinel m+2). Indices are 1-based.
class DshPlus {
 public:
  DshPlus(double t, Side side, double zeta, GaussianBank bank);
  static DshPlus sample(double t, Side side, double zeta, std::size_t d, std::uint64_t seed,
                        std::uint64_t m_max = kDefaultCapBudget,
                        std::size_t materialize_budget = kDefaultMaterializeBudget);

  std::uint32_t dataset_hash(std::span<const double> x) const;
  std::uint32_t query_hash(std::span<const double> y) const;
  // Dataset hashes of ds rows `idx`, scanning each generated row once.
  void dataset_hash_batch(const Dataset& ds, std::span<const std::uint32_t> idx, std::uint32_t* out) const;
  // Keeps only candidates whose dataset hash equals the query hash of y.
  void filter_bucket(const Dataset& ds, std::vector<std::uint32_t>& candidates, std::span<const double> y) const;
  // Whether h(x) == g(y), scanning rows until either side resolves.
  bool collides(std::span<const double> x, std::span<const double> y) const;

  double t() const noexcept { return t_; }
  Side side() const noexcept { return side_; }
  double zeta() const noexcept { return zeta_; }
  std::size_t m() const noexcept { return bank_.rows(); }
  const GaussianBank& bank() const noexcept { return bank_; }

 private:
  bool query_hit(double proj) const noexcept { return side_ == Side::Plus ? proj >= t_ : proj <= -t_; }

  double t_;
  Side side_;
  double zeta_;
  GaussianBank bank_;
};

// Parameters of a powered scheme: each of k copies combines a plus component
// with threshold t_plus and a minus component with threshold t_minus. A zero
// threshold drops that component (it then maps everything to one bucket).
// D_γ(t) is {t_plus = t, t_minus = γt}.
struct SchemeSpec {
  double t_plus = 0.0;
  double t_minus = 0.0;
  double zeta = kDefaultZeta;
  unsigned k = 1;

  static SchemeSpec gamma_family(double t, double gamma, double zeta, unsigned k = 1) {
    return {t, gamma * t, zeta, k};
  }
  bool operator==(const SchemeSpec&) const = default;
};

// Pair of independent components (h_γ, g_γ).
struct DshGamma {
  std::optional<DshPlus> plus;
  std::optional<DshPlus> minus;
};

using BucketKey = std::vector<std::uint32_t>;

struct BucketKeyHash {
  std::size_t operator()(const BucketKey& k) const noexcept;
};

class PoweredScheme {
 public:
  PoweredScheme() = default;
  explicit PoweredScheme(std::vector<DshGamma> copies) : copies_(std::move(copies)) {}

  // Bank of copy c, component j (0 plus, 1 minus) is seeded by derive_seed(seed, c, j).
  static PoweredScheme sample(const SchemeSpec& spec, std::size_t d, std::uint64_t seed,
                              std::uint64_t m_max = kDefaultCapBudget,
                              std::size_t materialize_budget = kDefaultMaterializeBudget);

  // Key of length 2k: (plus, minus) per copy; 0 stands for a dropped component.
  BucketKey dataset_key(std::span<const double> x) const;
  BucketKey query_key(std::span<const double> y) const;
  // Keys of ds rows idx, row-major with width 2k, one bank pass per component.
  std::vector<std::uint32_t> dataset_keys(const Dataset& ds, std::span<const std::uint32_t> idx) const;
  bool collides(std::span<const double> x, std::span<const double> y) const;
  // Keep the candidates whose dataset key equals y's query key.
  void filter_bucket(const Dataset& ds, std::vector<std::uint32_t>& candidates, std::span<const double> y) const;

  std::size_t k() const noexcept { return copies_.size(); }
  const std::vector<DshGamma>& copies() const noexcept { return copies_; }

 private:
  std::vector<DshGamma> copies_;
};

// Sum of caps over all banks of the powered scheme; throws CapBudgetExceeded
// past m_max.
std::uint64_t scheme_caps(const SchemeSpec& spec, std::uint64_t m_max = kDefaultCapBudget);

// ---- exact collision probabilities ----

// Q(x) = P[N(0,1) ≥ x].
double normal_sf(double x);
// P[X₁ ≥ t, X₂ ≥ t] for standard bivariate normal with correlation ρ.
double orthant_equal(double t, double rho);
// Exact P[h₊(x) = g₊(y)] for ⟨x,y⟩ = ρ with m caps at threshold t: with
// a = P[both hit a row] and u = P[either hits], it is a·(1−(1−u)^m)/u.
double plus_collision_prob(double rho, double t, std::uint64_t m);
// D₋ with the query-side threshold −t; equals plus_collision_prob(−ρ, t, m).
double minus_collision_prob(double rho, double t, std::uint64_t m);
double log_scheme_collision_prob(const SchemeSpec& spec, double rho, std::uint64_t m_max = kDefaultCapBudget);
double scheme_collision_prob(const SchemeSpec& spec, double rho, std::uint64_t m_max = kDefaultCapBudget);

// ---- Monte Carlo oracle ----

enum class Family { Gamma, PlusOnly, MinusOnly };

struct McEstimate {
  double p_hat = 0.0;
  double stderr_ = 0.0;
  std::uint64_t hits = 0;
  std::uint64_t trials = 0;
};

// Fraction of freshly sampled schemes under which x = e₁ and y = ρe₁ + √(1−ρ²)e₂
// collide. The schemes are the real ones (lazy banks in dimension d); by
// isotropy d = 2 loses nothing.
McEstimate collision_prob_mc(double rho, double t, double gamma, double zeta, unsigned k,
                             std::uint64_t trials, Rng& rng, Family family = Family::Gamma,
                             std::size_t d = 2);
// Same for an arbitrary scheme spec and an explicit pair of unit vectors.
McEstimate collision_prob_mc(const SchemeSpec& spec, std::span<const double> x, std::span<const double> y,
                             std::uint64_t trials, Rng& rng);

// ---- analytic bounds ----

// C₁(δ) = max{(√2(1−ζ)δ²/(148√π))⁻², (2/(√π√δ))²}.
double collision_constant_c1(double delta, double zeta);

struct CollisionBounds {
  double lower = 0.0;
  double upper = 1.0;
};

// Gamma family: central case (C₁⁻¹E, C₁E) for |ρ| ≤ 1−δ; tail case
// (0, √C₁·e^{−((2−δ)/δ)·s²/2}) where s is the threshold of the component that
// the tail suppresses (γt toward ρ = +1, t toward ρ = −1). Plus/minus
// families return the three-case single-component bounds.
CollisionBounds collision_bounds(double rho, double t, double gamma, double zeta, double delta,
                                 Family family = Family::Gamma);

// p̂ ∈ [lower − s·σ(lower), upper + s·σ(upper)] with σ(q) the larger of the
// plug-in standard error and √(q(1−q)/N), so a zero-hit run does not count
// against a tiny positive lower bound.
bool within_bounds(const McEstimate& est, const CollisionBounds& b, double sigmas = 3.0);

}  // namespace mrhbe

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrhbe/core_data.hpp"
#include "mrhbe/kernels.hpp"
#include "mrhbe/mr_hbe.hpp"

namespace mrhbe {

// Radial factor p0 with |ln(p0(r₁)/p0(r₂))| ≤ q·γ + H·R·γ whenever
// r₂ ≤ r₁ ≤ (1+γ)r₂ inside (0, R].
struct LogLipschitzP0 {
  std::function<double(double)> fn;
  double q = 0.0;
  double H = 0.0;
  std::string label;

  double operator()(double r) const { return fn(r); }
};

// p0 ≡ 1
LogLipschitzP0 p0_const();
// r^q
LogLipschitzP0 p0_pow(double q);
// r^q·e^{f(r)} with H = L(f) on (0, R]. f-ids: zero, neg-linear (−r),
// neg-half-square (−r²/2), neg-square (−r²).
LogLipschitzP0 p0_pow_exp(double q, const std::string& f_id, double R);
// "const", "pow:q" or "pow-exp:q,f-id".
LogLipschitzP0 parse_p0(const std::string& text, double R);

struct P0Audit {
  double max_violation = 0.0;  // max of |ln ratio| − (qγ + HRγ)
  std::size_t samples = 0;
  bool passed() const noexcept { return max_violation <= 1e-9; }
};
// Samples γ ∈ (0,1] and r₂ log-uniform in [1e−6·R, R/(1+γ)].
P0Audit audit_p0(const LogLipschitzP0& p0, double R, std::size_t samples = 10000, std::uint64_t seed = 0x703061);

// γ* = 1/max{1, q + HR + 3LR²}
double gamma_star(double q, double H, double R, double lipschitz);

// Shells S_i = [r_i, r_{i+1}), r_i = (1+γ)^{i−1}·r0, i = 1..annuli().
struct AnnulusPartition {
  double r0 = 1.0;
  double R = 1.0;
  double gamma = 1.0;
  std::size_t k_star = 1;      // ⌈ln(R/r0)/ln(1+γ)⌉, at least 1
  std::vector<double> radii;   // r_1 .. r_{annuli+1}

  // k_star, or one more when R sits exactly on r_{k*+1}.
  std::size_t annuli() const noexcept { return radii.size() - 1; }
  double radius(std::size_t i) const { return radii.at(i - 1); }
  // 1-based shell holding `norm`; OutOfRange outside [r0, R].
  std::size_t index_of(double norm) const;
};

AnnulusPartition make_partition(double r0, double R, double gamma);

struct Truncated {
  std::vector<double> point;  // (x/‖x‖)·r_{i(x)}
  std::size_t annulus = 0;
};
Truncated truncate(std::span<const double> x, const AnnulusPartition& partition);

// Envelope e^{∓(q + HR + 3L·r_{i(x)}r_{i(y)})γ} for w(x̃,ỹ)/w(x,y).
std::pair<double, double> ratio_bounds(std::span<const double> x, std::span<const double> y,
                                       const AnnulusPartition& partition, const ConvexPhi& phi,
                                       const LogLipschitzP0& p0);

struct EuclideanOptions {
  BuildOptions build;
  // Query norm range; when set, every pair is built up front and the range
  // widens [r0, R]. Otherwise pairs are built on the first query in a shell.
  std::optional<std::pair<double, double>> query_norms;
  unsigned threads = 0;
};

// w(x,y) = p0(‖x‖)·e^{φ(⟨x,y⟩)} on points with norms in [r0, R]; φ must be
// convex on [−R², R²]. One MR-HBE per (data shell i, query shell j) on the
// normalized points of shell i with kernel φ(r_i r_j ρ) shifted to max 0.
class EuclideanEstimator {
 public:
  static EuclideanEstimator build(const ConvexPhi& phi, const LogLipschitzP0& p0, const Dataset& data,
                                  const EuclideanOptions& opts, std::uint64_t seed);

  const AnnulusPartition& partition() const noexcept { return partition_; }
  const ConvexPhi& phi() const noexcept { return phi_; }
  const LogLipschitzP0& p0() const noexcept { return p0_; }
  const Dataset& data() const noexcept { return *data_; }
  double w_max() const noexcept { return w_max_; }
  // Indices of the data points in shell i.
  const std::vector<std::size_t>& members(std::size_t i) const { return members_.at(i - 1); }

  double weight(std::span<const double> x, std::span<const double> y) const;
  // (1/(n·w_max))·Σ w(x, y)
  double exact_mu(std::span<const double> y) const;
  // φ*_ij = max over |ρ| ≤ 1 of φ(r_i r_j ρ)
  double phi_star(std::size_t i, std::size_t j) const;
  // A_ij = p0(r_i)·|X_i|·e^{φ*_ij}/(n·w_max)
  double a_coef(std::size_t i, std::size_t j) const;
  // μ_ij(y) by enumeration over shell i.
  double mu_ij(std::size_t i, std::span<const double> y) const;

  // Per-pair estimator; built on first use unless built eagerly.
  const MrHbeState& pair(std::size_t i, std::size_t j) const;
  std::size_t built_pairs() const;

 private:
  struct PairSlot {
    std::once_flag once;
    MrHbeState state;
  };

  ConvexPhi phi_ = builtin("gaussian");
  LogLipschitzP0 p0_;
  AnnulusPartition partition_;
  std::shared_ptr<const Dataset> data_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::shared_ptr<const Dataset>> shells_;  // normalized points per shell
  BuildOptions build_;
  std::uint64_t seed_ = 0;
  double w_max_ = 1.0;
  // annuli² slots, row i−1, column j−1; shared so the estimator stays movable.
  std::shared_ptr<std::vector<PairSlot>> pairs_;
};

// Σ_i Z_ij(y): bucket sampling on normalized points, true weight w(X_t, y) in
// the numerator, scaled by 1/(n·w_max). Unbiased for exact_mu(y).
double draw_euclidean(const EuclideanEstimator& est, std::span<const double> y, Rng& rng, bool fresh_tables = false);

}  // namespace mrhbe

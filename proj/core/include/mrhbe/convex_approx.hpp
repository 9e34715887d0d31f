#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "mrhbe/kernels.hpp"

namespace mrhbe {

// h_{γ,t}(ρ) = −((1−ρ)/(1+ρ) + γ²(1+ρ)/(1−ρ))·t²/2 for |ρ| < 1. At ρ = ±1 the
// value is −∞ unless the coefficient that blows up is zero.
double idealized_log_prob(double gamma_sq, double t_sq, double rho);
// h' = (1/(1+ρ)² − γ²/(1−ρ)²)·t².
double idealized_log_prob_derivative(double gamma_sq, double t_sq, double rho);

// One anchor of an interpolation set. Interior anchors are the two-sided
// scheme tangent to φ at rho0. Boundary anchors (side = ±1) use only the
// component pointing at rho0 and carry φ(±1) as an additive offset, realised
// by sub-sampling the data.
struct LocalScheme {
  double rho0 = 0.0;
  double gamma_sq = 0.0;
  double t_sq = 0.0;
  double boundary_offset = 0.0;
  int side = 0;  // 0 interior, +1 or −1 boundary

  // Idealized log collision probability including the offset.
  double log_prob(double rho) const;
  double log_prob_derivative(double rho) const;
  bool is_boundary() const noexcept { return side != 0; }
};

// (γ₀², t₀²) making h tangent to φ at ρ₀. Requires |ρ₀| ≤ 1−δ and
// 2φ(ρ₀) < −(1−ρ₀²)|φ'(ρ₀)|; throws DomainError / LemmaPositiveViolated.
std::pair<double, double> local_params(const ConvexPhi& phi, double rho0, double delta = 1e-12);
LocalScheme local_scheme(const ConvexPhi& phi, double rho0, double delta = 1e-12);
// t² = 4·max{±φ'(±1), 0}, offset φ(±1).
LocalScheme boundary_params(const ConvexPhi& phi, int side);

// Convex piecewise-linear function; segment i covers [breakpoints[i], breakpoints[i+1]].
struct PiecewiseLinear {
  std::vector<double> breakpoints;
  std::vector<double> slopes;
  std::vector<double> intercepts;

  std::size_t segments() const noexcept { return slopes.size(); }
  double operator()(double rho) const;
};

// Tangent-envelope lower approximation with 0 ≤ φ − ℓ ≤ ε on [a,b] for convex φ.
// Every piece is a tangent line of φ, so ℓ extended linearly stays below φ.
PiecewiseLinear sandwich(const ConvexPhi& phi, double a, double b, double eps);

// Anchors ρ_i = ρ₋ + (1−|ρ₋|)((1+s)^i − 1), s = √(ε/(8R)), i = 0..T, for a
// linear piece with range R on [ρ₋, ρ₊] ⊆ [−1, 0]. R is floored at max(ε, 1e−9).
std::vector<double> linear_anchor_points(double rho_minus, double rho_plus, double range, double eps);

struct InterpolationSet {
  std::vector<LocalScheme> anchors;  // sorted by rho0, boundary anchors first/last
  double epsilon = 0.0;
  double delta = 0.0;  // δ(ε) = min{1, √(ε/4L), ε/L}
  std::size_t refinements = 0;  // anchors added by grid verification
  std::size_t candidates = 0;   // anchors before pruning
  ConvexPhi phi;

  double sup_log_prob(double rho) const;
};

double boundary_delta(double lipschitz, double eps);

struct InterpolationOptions {
  // Keep a minimal interval cover of the grid drawn from the constructed
  // anchors. φ − h is convex, so each anchor covers one interval.
  bool prune = true;
  std::size_t grid = 10000;
};

// φ must be nonpositive and convex. The result is verified on the standard
// grid; where the gap exceeds 2ε an extra tangent anchor is inserted.
InterpolationSet build_interpolation_set(const ConvexPhi& phi, double eps, const InterpolationOptions& opts = {});

struct FidelityReport {
  double max_gap = 0.0;           // max of φ − sup h
  double min_gap = 0.0;           // min of φ − sup h
  double max_excess = 0.0;        // max over anchors and grid of h − φ
  double max_value_mismatch = 0.0;       // max relative |h(ρ₀) − φ(ρ₀)| over interior anchors
  double max_derivative_mismatch = 0.0;  // max relative |h'(ρ₀) − φ'(ρ₀)|
  std::size_t grid_points = 0;
};

// 10⁴ uniform points in [−1,1] plus every anchor and ±(1−δ).
std::vector<double> verification_grid(const InterpolationSet& set, std::size_t n = 10000);
FidelityReport verify_fidelity(const InterpolationSet& set, std::size_t n = 10000);

}  // namespace mrhbe

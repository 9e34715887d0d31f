#include "mrhbe/convex_approx.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mrhbe/error.hpp"

namespace mrhbe {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

double idealized_log_prob(double gamma_sq, double t_sq, double rho) {
  if (t_sq == 0.0) return 0.0;
  if (rho <= -1.0) return kNegInf;
  if (rho >= 1.0) return gamma_sq == 0.0 ? 0.0 : kNegInf;
  return -((1.0 - rho) / (1.0 + rho) + gamma_sq * (1.0 + rho) / (1.0 - rho)) * t_sq / 2.0;
}

double idealized_log_prob_derivative(double gamma_sq, double t_sq, double rho) {
  const double a = 1.0 + rho, b = 1.0 - rho;
  return (1.0 / (a * a) - gamma_sq / (b * b)) * t_sq;
}

double LocalScheme::log_prob(double rho) const {
  if (side == 0) return idealized_log_prob(gamma_sq, t_sq, rho);
  if (t_sq == 0.0) return boundary_offset;
  // The one-sided form toward +1 is h with γ = 0; toward −1 its mirror.
  const double r = side > 0 ? rho : -rho;
  if (r <= -1.0) return kNegInf;
  return -((1.0 - r) / (1.0 + r)) * t_sq / 2.0 + boundary_offset;
}

double LocalScheme::log_prob_derivative(double rho) const {
  if (side == 0) return idealized_log_prob_derivative(gamma_sq, t_sq, rho);
  const double r = side > 0 ? rho : -rho;
  return static_cast<double>(side) * t_sq / ((1.0 + r) * (1.0 + r));
}

std::pair<double, double> local_params(const ConvexPhi& phi, double rho0, double delta) {
  if (!(delta > 0.0) || !(std::abs(rho0) <= 1.0 - delta)) {
    fail(ErrorCode::DomainError, "local_params: anchor must satisfy |rho0| <= 1 - delta");
  }
  const double f = phi.value(rho0);
  const double df = phi.derivative(rho0);
  const double w = 1.0 - rho0 * rho0;
  const double num = 2.0 * f + w * df;
  const double den = 2.0 * f - w * df;
  // Both must be negative; equivalently 2φ < −(1−ρ₀²)|φ'|.
  const double tol = 1e-15 * (std::abs(f) + std::abs(df));
  if (!(num < tol && den < -tol)) {
    fail(ErrorCode::LemmaPositiveViolated,
         "local_params: 2*phi(rho0) >= -(1-rho0^2)|phi'(rho0)| (phi not nonpositive convex non-constant?)");
  }
  const double ratio = (1.0 - rho0) / (1.0 + rho0);
  const double gamma_sq = std::max(0.0, ratio * ratio * num / den);
  const double t_sq = -0.5 / ratio * den;
  return {gamma_sq, t_sq};
}

LocalScheme local_scheme(const ConvexPhi& phi, double rho0, double delta) {
  const auto [g2, t2] = local_params(phi, rho0, delta);
  return LocalScheme{rho0, g2, t2, 0.0, 0};
}

LocalScheme boundary_params(const ConvexPhi& phi, int side) {
  if (side != 1 && side != -1) fail(ErrorCode::BadParams, "boundary side must be +1 or -1");
  const double rho = static_cast<double>(side);
  const double slope = static_cast<double>(side) * phi.derivative(rho);
  return LocalScheme{rho, 0.0, 4.0 * std::max(slope, 0.0), phi.value(rho), side};
}

double PiecewiseLinear::operator()(double rho) const {
  if (slopes.empty()) return std::numeric_limits<double>::quiet_NaN();
  // Convex, so the value is the max of the pieces; this also extends linearly.
  double best = kNegInf;
  for (std::size_t i = 0; i < slopes.size(); ++i) best = std::max(best, slopes[i] * rho + intercepts[i]);
  return best;
}

PiecewiseLinear sandwich(const ConvexPhi& phi, double a, double b, double eps) {
  if (!(eps > 0.0)) fail(ErrorCode::BadParams, "sandwich: eps must be positive");
  if (!(a <= b)) fail(ErrorCode::BadParams, "sandwich: need a <= b");
  struct Tangent {
    double x, slope, intercept;
  };
  auto tangent = [&](double x) {
    const double s = phi.derivative(x);
    return Tangent{x, s, phi.value(x) - s * x};
  };

  PiecewiseLinear out;
  if (a == b) {
    const Tangent t = tangent(a);
    out.breakpoints = {a, a};
    out.slopes = {t.slope};
    out.intercepts = {t.intercept};
    return out;
  }

  auto crossing = [](const Tangent& l, const Tangent& r) {
    const double ds = r.slope - l.slope;
    if (!(std::abs(ds) > 1e-14 * (1.0 + std::abs(l.slope) + std::abs(r.slope)))) return 0.5 * (l.x + r.x);
    return std::clamp((l.intercept - r.intercept) / ds, l.x, r.x);
  };

  // Accepted tangents in increasing x; `open` holds intervals still to check.
  std::vector<Tangent> done;
  std::vector<std::pair<Tangent, Tangent>> open{{tangent(a), tangent(b)}};
  done.push_back(open.front().first);
  while (!open.empty()) {
    auto [l, r] = open.back();
    open.pop_back();
    const double z = crossing(l, r);
    const double err = phi.value(z) - (l.slope * z + l.intercept);
    const bool parallel = std::abs(r.slope - l.slope) <= 1e-14 * (1.0 + std::abs(l.slope));
    if (err > eps && !parallel && z > l.x && z < r.x && (r.x - l.x) > 1e-13) {
      const Tangent m = tangent(z);
      // Left half processed first: push right then left.
      open.push_back({m, r});
      open.push_back({l, m});
    } else {
      done.push_back(r);
    }
  }

  // Merge collinear neighbours, then place breakpoints at the crossings.
  std::vector<Tangent> pieces;
  for (const Tangent& t : done) {
    if (!pieces.empty()) {
      const Tangent& p = pieces.back();
      const double scale = 1.0 + std::abs(p.slope) + std::abs(p.intercept);
      if (std::abs(t.slope - p.slope) <= 1e-12 * scale && std::abs(t.intercept - p.intercept) <= 1e-12 * scale) {
        continue;
      }
    }
    pieces.push_back(t);
  }
  out.breakpoints.push_back(a);
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    out.slopes.push_back(pieces[i].slope);
    out.intercepts.push_back(pieces[i].intercept);
    if (i + 1 < pieces.size()) out.breakpoints.push_back(crossing(pieces[i], pieces[i + 1]));
  }
  out.breakpoints.push_back(b);
  return out;
}

std::vector<double> linear_anchor_points(double rho_minus, double rho_plus, double range, double eps) {
  if (!(eps > 0.0)) fail(ErrorCode::BadParams, "linear_anchor_points: eps must be positive");
  if (!(rho_minus <= rho_plus) || rho_plus > 0.0 || rho_minus <= -1.0) {
    fail(ErrorCode::BadParams, "linear_anchor_points: need -1 < rho_minus <= rho_plus <= 0");
  }
  const double r = std::max({range, eps, 1e-9});
  const double step = 1.0 + std::sqrt(eps / (8.0 * r));
  const double base = 1.0 - std::abs(rho_minus);
  const auto count = static_cast<std::size_t>(
      std::floor(std::log((1.0 - std::abs(rho_plus)) / base) / std::log(step) + 1e-12));
  std::vector<double> pts;
  pts.reserve(count + 1);
  double f = 1.0;
  for (std::size_t i = 0; i <= count; ++i, f *= step) pts.push_back(std::min(rho_minus + base * (f - 1.0), rho_plus));
  return pts;
}

double InterpolationSet::sup_log_prob(double rho) const {
  double best = kNegInf;
  for (const LocalScheme& s : anchors) best = std::max(best, s.log_prob(rho));
  return best;
}

double boundary_delta(double lipschitz, double eps) {
  if (!(lipschitz > 0.0)) return 1.0;
  return std::min({1.0, std::sqrt(eps / (4.0 * lipschitz)), eps / lipschitz});
}

namespace {

void sort_anchors(std::vector<LocalScheme>& anchors) {
  std::sort(anchors.begin(), anchors.end(), [](const LocalScheme& x, const LocalScheme& y) {
    return x.rho0 != y.rho0 ? x.rho0 < y.rho0 : std::abs(x.side) > std::abs(y.side);
  });
}

// Anchor abscissae for one half, computed on [−1+δ, 0] of `half`.
void half_anchor_points(const ConvexPhi& half, double delta, double eps, double sign, std::vector<double>& out) {
  const PiecewiseLinear pl = sandwich(half, -1.0 + delta, 0.0, eps);
  for (std::size_t i = 0; i < pl.segments(); ++i) {
    const double lo = pl.breakpoints[i], hi = pl.breakpoints[i + 1];
    const double range = std::abs(pl.slopes[i]) * (hi - lo);
    for (double p : linear_anchor_points(lo, hi, range, eps)) out.push_back(sign * p);
  }
}

// Greedy interval cover of the grid. Consecutive picks overlap on a grid point
// so their continuous coverage intervals leave no hole in between.
void prune_anchors(InterpolationSet& set, const std::vector<double>& grid) {
  const std::size_t n = grid.size();
  const double limit = 2.0 * set.epsilon;
  std::vector<double> phis(n);
  for (std::size_t i = 0; i < n; ++i) phis[i] = set.phi.value(grid[i]);
  struct Cover {
    std::ptrdiff_t lo, hi;
  };
  std::vector<Cover> cover(set.anchors.size(), Cover{-1, -2});
  for (std::size_t a = 0; a < set.anchors.size(); ++a) {
    for (std::size_t i = 0; i < n; ++i) {
      if (phis[i] - set.anchors[a].log_prob(grid[i]) <= limit) {
        if (cover[a].lo < 0) cover[a].lo = static_cast<std::ptrdiff_t>(i);
        cover[a].hi = static_cast<std::ptrdiff_t>(i);
      }
    }
  }
  std::vector<bool> keep(set.anchors.size(), false);
  std::ptrdiff_t pos = 0;
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  // Boundary anchors are always kept; the left one seeds the sweep.
  for (std::size_t a = 0; a < set.anchors.size(); ++a) {
    if (!set.anchors[a].is_boundary()) continue;
    keep[a] = true;
    if (set.anchors[a].side < 0 && cover[a].lo == 0) pos = cover[a].hi + 1;
  }
  std::ptrdiff_t right_start = last + 1;
  for (std::size_t a = 0; a < set.anchors.size(); ++a) {
    if (set.anchors[a].side > 0 && cover[a].hi == last) right_start = cover[a].lo;
  }
  while (pos < right_start) {
    std::ptrdiff_t best_hi = -1;
    std::size_t best = 0;
    for (const std::ptrdiff_t need : {pos - 1, pos}) {
      for (std::size_t a = 0; a < set.anchors.size(); ++a) {
        if (cover[a].lo >= 0 && cover[a].lo <= std::max<std::ptrdiff_t>(need, 0) && cover[a].hi > best_hi) {
          best_hi = cover[a].hi;
          best = a;
        }
      }
      if (best_hi >= pos) break;
    }
    if (best_hi < pos) return;  // grid not coverable by the candidates; keep them all
    keep[best] = true;
    pos = best_hi + 1;
  }
  std::vector<LocalScheme> kept;
  for (std::size_t a = 0; a < set.anchors.size(); ++a) {
    if (keep[a]) kept.push_back(set.anchors[a]);
  }
  set.anchors = std::move(kept);
}

}  // namespace

InterpolationSet build_interpolation_set(const ConvexPhi& phi, double eps, const InterpolationOptions& opts) {
  if (!(eps > 0.0)) fail(ErrorCode::BadParams, "build_interpolation_set: eps must be positive");
  InterpolationSet set{.anchors = {}, .epsilon = eps, .delta = 1.0, .refinements = 0, .candidates = 0, .phi = phi};
  set.anchors.push_back(boundary_params(phi, -1));
  set.anchors.push_back(boundary_params(phi, +1));

  const bool constant = phi.range() <= 1e-15 && std::abs(phi.derivative(-1.0)) <= 1e-15 &&
                        std::abs(phi.derivative(1.0)) <= 1e-15;
  if (constant) {
    set.candidates = set.anchors.size();
    return set;
  }

  set.delta = boundary_delta(phi.lipschitz(), eps);
  std::vector<double> rhos;
  half_anchor_points(phi, set.delta, eps, 1.0, rhos);
  half_anchor_points(mirror(phi), set.delta, eps, -1.0, rhos);
  std::sort(rhos.begin(), rhos.end());
  rhos.erase(std::unique(rhos.begin(), rhos.end(), [](double x, double y) { return std::abs(x - y) <= 1e-12; }),
             rhos.end());
  const double delta = set.delta;
  for (double r : rhos) set.anchors.push_back(local_scheme(phi, std::clamp(r, -1.0 + delta, 1.0 - delta), delta));
  sort_anchors(set.anchors);

  // Grid verification; insert a tangent anchor at the worst violation.
  for (int iter = 0; iter < 256; ++iter) {
    double worst = 2.0 * eps;
    double where = 0.0;
    for (double r : verification_grid(set, opts.grid)) {
      const double gap = phi.value(r) - set.sup_log_prob(r);
      if (gap > worst && std::abs(r) <= 1.0 - delta) {
        worst = gap;
        where = r;
      }
    }
    if (worst <= 2.0 * eps) break;
    set.anchors.push_back(local_scheme(phi, where, delta));
    sort_anchors(set.anchors);
    ++set.refinements;
  }
  set.candidates = set.anchors.size();
  if (opts.prune) prune_anchors(set, verification_grid(set, opts.grid));
  return set;
}

std::vector<double> verification_grid(const InterpolationSet& set, std::size_t n) {
  std::vector<double> g;
  g.reserve(n + set.anchors.size() + 2);
  for (std::size_t i = 0; i < n; ++i) g.push_back(n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / (n - 1));
  for (const LocalScheme& s : set.anchors) g.push_back(s.rho0);
  g.push_back(-1.0 + set.delta);
  g.push_back(1.0 - set.delta);
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

FidelityReport verify_fidelity(const InterpolationSet& set, std::size_t n) {
  const std::vector<double> grid = verification_grid(set, n);
  std::vector<double> phis(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) phis[i] = set.phi.value(grid[i]);

  FidelityReport rep;
  rep.grid_points = grid.size();
  rep.max_gap = -std::numeric_limits<double>::infinity();
  rep.min_gap = std::numeric_limits<double>::infinity();
  rep.max_excess = -std::numeric_limits<double>::infinity();
  std::vector<double> sup(grid.size(), kNegInf);
  for (const LocalScheme& s : set.anchors) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double h = s.log_prob(grid[i]);
      sup[i] = std::max(sup[i], h);
      rep.max_excess = std::max(rep.max_excess, h - phis[i]);
    }
    if (!s.is_boundary()) {
      const double f = set.phi.value(s.rho0), df = set.phi.derivative(s.rho0);
      rep.max_value_mismatch = std::max(rep.max_value_mismatch, std::abs(s.log_prob(s.rho0) - f) / (1.0 + std::abs(f)));
      rep.max_derivative_mismatch =
          std::max(rep.max_derivative_mismatch, std::abs(s.log_prob_derivative(s.rho0) - df) / (1.0 + std::abs(df)));
    }
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double gap = phis[i] - sup[i];
    rep.max_gap = std::max(rep.max_gap, gap);
    rep.min_gap = std::min(rep.min_gap, gap);
  }
  return rep;
}

}  // namespace mrhbe

#include "mrhbe/euclidean.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mrhbe/error.hpp"
#include "parallel.hpp"

namespace mrhbe {

// ---------------------------------------------------------------- p0

LogLipschitzP0 p0_const() {
  return {[](double) { return 1.0; }, 0.0, 0.0, "const"};
}

LogLipschitzP0 p0_pow(double q) {
  return {[q](double r) { return std::pow(r, q); }, std::abs(q), 0.0, "pow:" + std::to_string(q)};
}

LogLipschitzP0 p0_pow_exp(double q, const std::string& f_id, double R) {
  if (!(R > 0.0)) fail(ErrorCode::BadParams, "p0 radius bound must be positive");
  std::function<double(double)> f;
  double lf = 0.0;  // L(f) on (0, R]
  if (f_id == "zero") {
    f = [](double) { return 0.0; };
  } else if (f_id == "neg-linear") {
    f = [](double r) { return -r; };
    lf = 1.0;
  } else if (f_id == "neg-half-square") {
    f = [](double r) { return -0.5 * r * r; };
    lf = R;
  } else if (f_id == "neg-square") {
    f = [](double r) { return -r * r; };
    lf = 2.0 * R;
  } else {
    fail(ErrorCode::BadParams, "unknown p0 exponent '" + f_id + "' (zero|neg-linear|neg-half-square|neg-square)");
  }
  return {[q, f](double r) { return std::pow(r, q) * std::exp(f(r)); }, std::abs(q), lf,
          "pow-exp:" + std::to_string(q) + "," + f_id};
}

LogLipschitzP0 parse_p0(const std::string& text, double R) {
  const auto colon = text.find(':');
  const std::string form = text.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : text.substr(colon + 1);
  try {
    if (form == "const" && args.empty()) return p0_const();
    if (form == "pow" && !args.empty()) return p0_pow(std::stod(args));
    if (form == "pow-exp") {
      const auto comma = args.find(',');
      if (comma != std::string::npos) return p0_pow_exp(std::stod(args.substr(0, comma)), args.substr(comma + 1), R);
    }
  } catch (const std::logic_error&) {
    // stod failures fall through to the format error below
  }
  fail(ErrorCode::BadParams, "p0 must be const, pow:q or pow-exp:q,f-id; got '" + text + "'");
}

P0Audit audit_p0(const LogLipschitzP0& p0, double R, std::size_t samples, std::uint64_t seed) {
  if (!p0.fn) fail(ErrorCode::BadParams, "p0 has no function");
  P0Audit a;
  a.samples = samples;
  a.max_violation = -std::numeric_limits<double>::infinity();
  Rng rng(seed);
  for (std::size_t s = 0; s < samples; ++s) {
    const double gamma = 1.0 - rng.uniform();  // (0,1]
    const double hi = R / (1.0 + gamma), lo = 1e-6 * R;
    const double r2 = lo * std::pow(hi / lo, rng.uniform());
    const double r1 = r2 * (1.0 + gamma * rng.uniform());
    const double p1 = p0(r1), p2 = p0(r2);
    const double lhs = (p1 > 0.0 && p2 > 0.0) ? std::abs(std::log(p1 / p2)) : std::numeric_limits<double>::infinity();
    a.max_violation = std::max(a.max_violation, lhs - (p0.q + p0.H * R) * gamma);
  }
  return a;
}

// ---------------------------------------------------------------- partition

double gamma_star(double q, double H, double R, double lipschitz) {
  return 1.0 / std::max(1.0, q + H * R + 3.0 * lipschitz * R * R);
}

AnnulusPartition make_partition(double r0, double R, double gamma) {
  if (!(r0 > 0.0 && R >= r0 && std::isfinite(R))) fail(ErrorCode::BadParams, "need 0 < r0 <= R");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail(ErrorCode::BadParams, "gamma must lie in (0,1]");
  AnnulusPartition p;
  p.r0 = r0;
  p.R = R;
  p.gamma = gamma;
  p.k_star = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::log(R / r0) / std::log1p(gamma))));
  for (std::size_t i = 1; i <= p.k_star + 1; ++i) p.radii.push_back(r0 * std::pow(1.0 + gamma, static_cast<double>(i - 1)));
  // Shells are half-open, so a norm equal to r_{k*+1} needs one more shell.
  if (p.radii.back() <= R) p.radii.push_back(p.radii.back() * (1.0 + gamma));
  return p;
}

std::size_t AnnulusPartition::index_of(double n) const {
  constexpr double kTol = 1e-12;
  if (!(n >= r0 * (1.0 - kTol) && n <= R * (1.0 + kTol))) {
    fail(ErrorCode::OutOfRange, "norm " + std::to_string(n) + " outside [r0, R]");
  }
  n = std::clamp(n, r0, R);
  const double guess = std::floor(std::log(n / r0) / std::log1p(gamma)) + 1.0;
  auto i = static_cast<std::size_t>(std::clamp(guess, 1.0, static_cast<double>(annuli())));
  // Fix rounding of the logarithm against the stored radii.
  while (i > 1 && n < radius(i)) --i;
  while (i < annuli() && n >= radius(i + 1)) ++i;
  return i;
}

Truncated truncate(std::span<const double> x, const AnnulusPartition& partition) {
  const double nx = norm(x);
  Truncated t;
  t.annulus = partition.index_of(nx);
  const double s = partition.radius(t.annulus) / nx;
  t.point.resize(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) t.point[j] = x[j] * s;
  return t;
}

std::pair<double, double> ratio_bounds(std::span<const double> x, std::span<const double> y,
                                       const AnnulusPartition& partition, const ConvexPhi& phi,
                                       const LogLipschitzP0& p0) {
  const double rx = partition.radius(partition.index_of(norm(x)));
  const double ry = partition.radius(partition.index_of(norm(y)));
  const double c = (p0.q + p0.H * partition.R + 3.0 * phi.lipschitz() * rx * ry) * partition.gamma;
  return {std::exp(-c), std::exp(c)};
}

// ---------------------------------------------------------------- estimator

EuclideanEstimator EuclideanEstimator::build(const ConvexPhi& phi, const LogLipschitzP0& p0, const Dataset& data,
                                             const EuclideanOptions& opts, std::uint64_t seed) {
  if (data.empty()) fail(ErrorCode::EmptyDataset, "cannot build on an empty dataset");
  if (!p0.fn) fail(ErrorCode::BadParams, "p0 has no function");
  EuclideanEstimator e;
  e.phi_ = phi;
  e.p0_ = p0;
  e.seed_ = seed;
  e.build_ = opts.build;
  e.build_.beta = 0.5;
  e.data_ = std::make_shared<const Dataset>(data);

  std::vector<double> norms(data.size());
  double r0 = std::numeric_limits<double>::infinity(), R = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    norms[i] = norm(data.row(i));
    if (!(norms[i] > 0.0)) fail(ErrorCode::ZeroNorm, "point " + std::to_string(i) + " has zero norm");
    r0 = std::min(r0, norms[i]);
    R = std::max(R, norms[i]);
  }
  if (opts.query_norms) {
    const auto [qlo, qhi] = *opts.query_norms;
    if (!(qlo > 0.0 && qhi >= qlo)) fail(ErrorCode::BadParams, "query norm bounds need 0 < lo <= hi");
    r0 = std::min(r0, qlo);
    R = std::max(R, qhi);
  }
  const double R2 = R * R;
  if (phi.lo() > -R2 * (1.0 - 1e-12) || phi.hi() < R2 * (1.0 - 1e-12)) {
    fail(ErrorCode::DomainExceeded, "phi must be defined on [-R^2, R^2]");
  }
  const P0Audit audit = audit_p0(p0, R);
  if (!audit.passed()) {
    fail(ErrorCode::BadParams, "p0 violates its log-Lipschitz constants by " + std::to_string(audit.max_violation));
  }

  e.partition_ = make_partition(r0, R, gamma_star(p0.q, p0.H, R, phi.lipschitz()));
  const std::size_t K = e.partition_.annuli();
  e.members_.assign(K, {});
  for (std::size_t i = 0; i < data.size(); ++i) e.members_[e.partition_.index_of(norms[i]) - 1].push_back(i);
  e.shells_.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    if (e.members_[k].empty()) continue;
    e.shells_[k] = std::make_shared<const Dataset>(data.subset(e.members_[k]).normalized());
  }

  // φ is convex, so its max over [−R², R²] sits at an end.
  const double top = std::max(phi.value(-R2), phi.value(R2));
  double p0_max = 0.0;
  constexpr int kGrid = 1000;
  for (int g = 0; g <= kGrid; ++g) p0_max = std::max(p0_max, p0(r0 + (R - r0) * g / kGrid));
  for (double r : e.partition_.radii) {
    if (r <= R) p0_max = std::max(p0_max, p0(r));
  }
  e.w_max_ = p0_max * std::exp(top);
  if (!(e.w_max_ > 0.0 && std::isfinite(e.w_max_))) fail(ErrorCode::BadParams, "w_max is not a positive finite number");

  e.pairs_ = std::make_shared<std::vector<PairSlot>>(K * K);
  if (opts.query_norms) {
    const std::size_t jlo = e.partition_.index_of(opts.query_norms->first);
    const std::size_t jhi = e.partition_.index_of(opts.query_norms->second);
    std::vector<std::pair<std::size_t, std::size_t>> todo;
    for (std::size_t i = 1; i <= K; ++i) {
      if (e.members_[i - 1].empty()) continue;
      for (std::size_t j = jlo; j <= jhi; ++j) todo.emplace_back(i, j);
    }
    detail::parallel_for(todo.size(), opts.threads, [&](std::size_t k) { e.pair(todo[k].first, todo[k].second); });
  }
  return e;
}

double EuclideanEstimator::weight(std::span<const double> x, std::span<const double> y) const {
  return p0_(norm(x)) * std::exp(phi_.value(dot(x, y)));
}

double EuclideanEstimator::exact_mu(std::span<const double> y) const {
  double s = 0.0, c = 0.0;  // Neumaier
  for (std::size_t i = 0; i < data_->size(); ++i) {
    const double v = weight(data_->row(i), y);
    const double t = s + v;
    c += std::abs(s) >= std::abs(v) ? (s - t) + v : (v - t) + s;
    s = t;
  }
  return (s + c) / (static_cast<double>(data_->size()) * w_max_);
}

double EuclideanEstimator::phi_star(std::size_t i, std::size_t j) const {
  const double a = partition_.radius(i) * partition_.radius(j);
  return std::max(phi_.value(a), phi_.value(-a));
}

double EuclideanEstimator::a_coef(std::size_t i, std::size_t j) const {
  return p0_(partition_.radius(i)) * static_cast<double>(members(i).size()) * std::exp(phi_star(i, j)) /
         (static_cast<double>(data_->size()) * w_max_);
}

double EuclideanEstimator::mu_ij(std::size_t i, std::span<const double> y) const {
  const std::vector<std::size_t>& m = members(i);
  if (m.empty()) return 0.0;
  const double ny = norm(y);
  const std::size_t j = partition_.index_of(ny);
  const double a = partition_.radius(i) * partition_.radius(j), top = phi_star(i, j);
  double s = 0.0;
  for (std::size_t k : m) {
    const auto x = data_->row(k);
    s += std::exp(phi_.value(a * std::clamp(dot(x, y) / (norm(x) * ny), -1.0, 1.0)) - top);
  }
  return s / static_cast<double>(m.size());
}

const MrHbeState& EuclideanEstimator::pair(std::size_t i, std::size_t j) const {
  const std::size_t K = partition_.annuli();
  if (i < 1 || i > K || j < 1 || j > K) fail(ErrorCode::OutOfRange, "annulus pair out of range");
  if (members_[i - 1].empty()) fail(ErrorCode::EmptyDataset, "annulus " + std::to_string(i) + " holds no points");
  PairSlot& slot = (*pairs_)[(i - 1) * K + (j - 1)];
  std::call_once(slot.once, [&] {
    const double a = partition_.radius(i) * partition_.radius(j);
    const ConvexPhi kernel = shift_nonpositive(rescale(phi_, a).restrict_to(-1.0, 1.0));
    auto bundle = SchemeBundle::build(kernel, data_->dim(), build_);
    slot.state = MrHbeState::build(std::move(bundle), shells_[i - 1], derive_seed(seed_, (i - 1) * K + (j - 1), 4),
                                   build_.eager_tables);
  });
  return slot.state;
}

std::size_t EuclideanEstimator::built_pairs() const {
  return static_cast<std::size_t>(
      std::count_if(pairs_->begin(), pairs_->end(), [](const PairSlot& s) { return s.state.built(); }));
}

double draw_euclidean(const EuclideanEstimator& est, std::span<const double> y, Rng& rng, bool fresh_tables) {
  if (y.size() != est.data().dim()) fail(ErrorCode::DimensionMismatch, "query dimension differs from the data");
  const double ny = norm(y);
  const std::size_t j = est.partition().index_of(ny);
  std::vector<double> yhat(y.begin(), y.end());
  for (double& v : yhat) v /= ny;
  double total = 0.0;
  for (std::size_t i = 1; i <= est.partition().annuli(); ++i) {
    const std::vector<std::size_t>& m = est.members(i);
    if (m.empty()) continue;
    const MrHbeState& built = est.pair(i, j);
    const MrHbeState own = fresh_tables ? built.replica(rng.next_seed(), false) : MrHbeState{};
    const MrHbeState& s = fresh_tables ? own : built;
    total += draw_weighted(s, yhat, [&](std::size_t k, double) { return est.weight(est.data().row(m[k]), y); }, rng);
  }
  return total / (static_cast<double>(est.data().size()) * est.w_max());
}

}  // namespace mrhbe

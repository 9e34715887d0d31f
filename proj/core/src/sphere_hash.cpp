#include "mrhbe/sphere_hash.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/special_functions/owens_t.hpp>

#include "mrhbe/error.hpp"

namespace mrhbe {

std::uint64_t caps_count(double t, double zeta, std::uint64_t m_max) {
  if (!(t > 0.0) || !std::isfinite(t)) fail(ErrorCode::BadParams, "caps_count needs t > 0");
  if (!(zeta > 0.0 && zeta < 1.0)) fail(ErrorCode::BadParams, "caps_count needs zeta in (0,1)");
  const double log_m = 0.5 * std::log(2.0 * std::numbers::pi) + std::log(t + 1.0) +
                       std::log(std::log(2.0 / zeta)) + 0.5 * t * t;
  if (log_m > std::log(static_cast<double>(m_max)) + 1e-12)
    fail(ErrorCode::CapBudgetExceeded, "m(t,zeta) exceeds the cap budget at t=" + std::to_string(t));
  const double m = std::ceil(std::exp(log_m));
  if (m > static_cast<double>(m_max))
    fail(ErrorCode::CapBudgetExceeded, "m(t,zeta) exceeds the cap budget at t=" + std::to_string(t));
  return static_cast<std::uint64_t>(m);
}

// ---------------------------------------------------------------- banks

GaussianBank::GaussianBank(std::uint64_t seed, std::size_t m, std::size_t d, bool materialize)
    : seed_(seed), m_(m), d_(d) {
  if (d == 0) fail(ErrorCode::BadParams, "bank dimension must be positive");
  if (materialize && m > 0) {
    data_.resize(m * d);
    for (std::size_t i = 0; i < m; ++i) gaussian_row(seed_, i, d_, data_.data() + i * d_);
  }
}

GaussianBank GaussianBank::from_rows(std::size_t d, std::vector<double> rows) {
  if (d == 0 || rows.empty() || rows.size() % d != 0)
    fail(ErrorCode::DimensionMismatch, "explicit bank must be a nonempty m×d matrix");
  GaussianBank b;
  b.d_ = d;
  b.m_ = rows.size() / d;
  b.data_ = std::move(rows);
  return b;
}

const double* GaussianBank::row(std::size_t i, double* scratch) const noexcept {
  if (!data_.empty()) return data_.data() + i * d_;
  gaussian_row(seed_, i, d_, scratch);
  return scratch;
}

// ---------------------------------------------------------------- components

namespace {

inline double dot_raw(const double* g, const double* x, std::size_t d) noexcept {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += g[j] * x[j];
  return s;
}

void check_dim(std::size_t got, std::size_t want) {
  if (got != want) fail(ErrorCode::DimensionMismatch, "point and bank dimensions differ");
}

}  // namespace

DshPlus::DshPlus(double t, Side side, double zeta, GaussianBank bank)
    : t_(t), side_(side), zeta_(zeta), bank_(std::move(bank)) {
  if (!(t > 0.0)) fail(ErrorCode::BadParams, "component threshold must be positive");
  if (bank_.rows() >= (std::uint64_t{1} << 31)) fail(ErrorCode::CapBudgetExceeded, "bank too large for 32-bit keys");
}

DshPlus DshPlus::sample(double t, Side side, double zeta, std::size_t d, std::uint64_t seed,
                        std::uint64_t m_max, std::size_t materialize_budget) {
  const std::uint64_t m = caps_count(t, zeta, m_max);
  const bool materialize = m * d <= materialize_budget;
  return DshPlus(t, side, zeta, GaussianBank(seed, m, d, materialize));
}

std::uint32_t DshPlus::dataset_hash(std::span<const double> x) const {
  check_dim(x.size(), bank_.dim());
  std::vector<double> scratch(bank_.dim());
  const std::size_t m = bank_.rows();
  for (std::size_t i = 0; i < m; ++i) {
    if (dot_raw(bank_.row(i, scratch.data()), x.data(), x.size()) >= t_) return static_cast<std::uint32_t>(i + 1);
  }
  return static_cast<std::uint32_t>(m + 1);
}

std::uint32_t DshPlus::query_hash(std::span<const double> y) const {
  check_dim(y.size(), bank_.dim());
  std::vector<double> scratch(bank_.dim());
  const std::size_t m = bank_.rows();
  for (std::size_t i = 0; i < m; ++i) {
    if (query_hit(dot_raw(bank_.row(i, scratch.data()), y.data(), y.size()))) return static_cast<std::uint32_t>(i + 1);
  }
  return static_cast<std::uint32_t>(m + 2);
}

void DshPlus::dataset_hash_batch(const Dataset& ds, std::span<const std::uint32_t> idx, std::uint32_t* out) const {
  check_dim(ds.dim(), bank_.dim());
  const std::size_t m = bank_.rows(), d = bank_.dim();
  std::vector<double> scratch(d);
  // Positions into idx still waiting for their first hit.
  std::vector<std::uint32_t> open(idx.size());
  for (std::size_t p = 0; p < idx.size(); ++p) {
    open[p] = static_cast<std::uint32_t>(p);
    out[p] = static_cast<std::uint32_t>(m + 1);
  }
  for (std::size_t i = 0; i < m && !open.empty(); ++i) {
    const double* g = bank_.row(i, scratch.data());
    std::size_t keep = 0;
    for (std::uint32_t p : open) {
      if (dot_raw(g, ds.row(idx[p]).data(), d) >= t_) {
        out[p] = static_cast<std::uint32_t>(i + 1);
      } else {
        open[keep++] = p;
      }
    }
    open.resize(keep);
  }
}

void DshPlus::filter_bucket(const Dataset& ds, std::vector<std::uint32_t>& cand, std::span<const double> y) const {
  check_dim(y.size(), bank_.dim());
  const std::size_t m = bank_.rows(), d = bank_.dim();
  std::vector<double> scratch(d);
  for (std::size_t i = 0; i < m && !cand.empty(); ++i) {
    const double* g = bank_.row(i, scratch.data());
    const bool y_hit = query_hit(dot_raw(g, y.data(), d));
    std::size_t keep = 0;
    for (std::uint32_t c : cand) {
      const bool x_hit = dot_raw(g, ds.row(c).data(), d) >= t_;
      // Before the query's index only non-hitting points survive; at it, only hitting ones.
      if (x_hit == y_hit) cand[keep++] = c;
    }
    cand.resize(keep);
    if (y_hit) return;
  }
  // The query fell through to m+2, which no dataset hash equals.
  cand.clear();
}

bool DshPlus::collides(std::span<const double> x, std::span<const double> y) const {
  check_dim(x.size(), bank_.dim());
  check_dim(y.size(), bank_.dim());
  const std::size_t m = bank_.rows(), d = bank_.dim();
  double scratch[16];
  std::vector<double> big;
  double* buf = scratch;
  if (d > 16) {
    big.resize(d);
    buf = big.data();
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double* g = bank_.row(i, buf);
    const bool x_hit = dot_raw(g, x.data(), d) >= t_;
    const bool y_hit = query_hit(dot_raw(g, y.data(), d));
    if (x_hit || y_hit) return x_hit && y_hit;
  }
  return false;
}

// ---------------------------------------------------------------- powered

std::size_t BucketKeyHash::operator()(const BucketKey& k) const noexcept {
  std::uint64_t h = 0x243F6A8885A308D3ull ^ k.size();
  for (std::uint32_t v : k) h = mix64(h ^ v);
  return static_cast<std::size_t>(h);
}

PoweredScheme PoweredScheme::sample(const SchemeSpec& spec, std::size_t d, std::uint64_t seed,
                                    std::uint64_t m_max, std::size_t materialize_budget) {
  if (spec.k == 0) fail(ErrorCode::BadParams, "power k must be positive");
  scheme_caps(spec, m_max);
  std::vector<DshGamma> copies(spec.k);
  for (unsigned c = 0; c < spec.k; ++c) {
    if (spec.t_plus > 0.0)
      copies[c].plus = DshPlus::sample(spec.t_plus, Side::Plus, spec.zeta, d, derive_seed(seed, c, 0), m_max,
                                       materialize_budget);
    if (spec.t_minus > 0.0)
      copies[c].minus = DshPlus::sample(spec.t_minus, Side::Minus, spec.zeta, d, derive_seed(seed, c, 1), m_max,
                                        materialize_budget);
  }
  return PoweredScheme(std::move(copies));
}

BucketKey PoweredScheme::dataset_key(std::span<const double> x) const {
  BucketKey key;
  key.reserve(2 * copies_.size());
  for (const auto& c : copies_) {
    key.push_back(c.plus ? c.plus->dataset_hash(x) : 0u);
    key.push_back(c.minus ? c.minus->dataset_hash(x) : 0u);
  }
  return key;
}

std::vector<std::uint32_t> PoweredScheme::dataset_keys(const Dataset& ds, std::span<const std::uint32_t> idx) const {
  const std::size_t w = 2 * copies_.size();
  std::vector<std::uint32_t> out(idx.size() * w, 0u);
  std::vector<std::uint32_t> col(idx.size());
  for (std::size_t c = 0; c < copies_.size(); ++c) {
    for (std::size_t j = 0; j < 2; ++j) {
      const auto& comp = j == 0 ? copies_[c].plus : copies_[c].minus;
      if (!comp) continue;
      comp->dataset_hash_batch(ds, idx, col.data());
      for (std::size_t p = 0; p < idx.size(); ++p) out[p * w + 2 * c + j] = col[p];
    }
  }
  return out;
}

BucketKey PoweredScheme::query_key(std::span<const double> y) const {
  BucketKey key;
  key.reserve(2 * copies_.size());
  for (const auto& c : copies_) {
    key.push_back(c.plus ? c.plus->query_hash(y) : 0u);
    key.push_back(c.minus ? c.minus->query_hash(y) : 0u);
  }
  return key;
}

void PoweredScheme::filter_bucket(const Dataset& ds, std::vector<std::uint32_t>& cand,
                                  std::span<const double> y) const {
  for (const auto& c : copies_) {
    if (cand.empty()) return;
    if (c.plus) c.plus->filter_bucket(ds, cand, y);
    if (cand.empty()) return;
    if (c.minus) c.minus->filter_bucket(ds, cand, y);
  }
}

bool PoweredScheme::collides(std::span<const double> x, std::span<const double> y) const {
  for (const auto& c : copies_) {
    // Lower threshold resolves in fewer rows, so try it first.
    const DshPlus* first = c.plus ? &*c.plus : nullptr;
    const DshPlus* second = c.minus ? &*c.minus : nullptr;
    if (first && second && second->t() < first->t()) std::swap(first, second);
    if (first && !first->collides(x, y)) return false;
    if (second && !second->collides(x, y)) return false;
  }
  return true;
}

std::uint64_t scheme_caps(const SchemeSpec& spec, std::uint64_t m_max) {
  std::uint64_t per_copy = 0;
  if (spec.t_plus > 0.0) per_copy += caps_count(spec.t_plus, spec.zeta, m_max);
  if (spec.t_minus > 0.0) per_copy += caps_count(spec.t_minus, spec.zeta, m_max);
  const long double total = static_cast<long double>(per_copy) * spec.k;
  if (total > static_cast<long double>(m_max))
    fail(ErrorCode::CapBudgetExceeded, "scheme needs more caps than the budget allows");
  return static_cast<std::uint64_t>(total);
}

// ---------------------------------------------------------------- exact probabilities

double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double orthant_equal(double t, double rho) {
  if (!(t >= 0.0)) fail(ErrorCode::BadParams, "orthant_equal needs t >= 0");
  rho = std::clamp(rho, -1.0, 1.0);
  const double q = normal_sf(t);
  if (rho >= 1.0) return q;
  if (rho <= -1.0) return t > 0.0 ? 0.0 : 0.5;
  const double a = std::sqrt((1.0 - rho) / (1.0 + rho));
  double p;
  if (a <= 1.0) {
    p = q - 2.0 * boost::math::owens_t(t, a);
  } else {
    // Owen's reflection T(h,a) + T(ah,1/a) = ½Q(h) + ½Q(ah) − Q(h)Q(ah) (h ≥ 0)
    // keeps the negative-correlation tail away from catastrophic cancellation.
    const double at = a * t;
    p = 2.0 * boost::math::owens_t(at, 1.0 / a) - normal_sf(at) * (1.0 - 2.0 * q);
  }
  return std::clamp(p, 0.0, q);
}

double plus_collision_prob(double rho, double t, std::uint64_t m) {
  const double a = orthant_equal(t, rho);
  if (a <= 0.0 || m == 0) return 0.0;
  const double u = 2.0 * normal_sf(t) - a;
  if (u <= 0.0) return std::min(1.0, static_cast<double>(m) * a);
  const double covered = -std::expm1(static_cast<double>(m) * std::log1p(-u));
  return std::clamp(a * covered / u, 0.0, 1.0);
}

double minus_collision_prob(double rho, double t, std::uint64_t m) { return plus_collision_prob(-rho, t, m); }

double log_scheme_collision_prob(const SchemeSpec& spec, double rho, std::uint64_t m_max) {
  double lp = 0.0;
  if (spec.t_plus > 0.0) lp += std::log(plus_collision_prob(rho, spec.t_plus, caps_count(spec.t_plus, spec.zeta, m_max)));
  if (spec.t_minus > 0.0)
    lp += std::log(minus_collision_prob(rho, spec.t_minus, caps_count(spec.t_minus, spec.zeta, m_max)));
  return static_cast<double>(spec.k) * lp;
}

double scheme_collision_prob(const SchemeSpec& spec, double rho, std::uint64_t m_max) {
  return std::exp(log_scheme_collision_prob(spec, rho, m_max));
}

// ---------------------------------------------------------------- Monte Carlo

McEstimate collision_prob_mc(const SchemeSpec& spec, std::span<const double> x, std::span<const double> y,
                             std::uint64_t trials, Rng& rng) {
  if (x.size() != y.size()) fail(ErrorCode::DimensionMismatch, "pair dimensions differ");
  scheme_caps(spec);
  McEstimate est;
  est.trials = trials;
  for (std::uint64_t i = 0; i < trials; ++i) {
    // Lazy banks: only the rows the pair actually inspects get generated.
    const PoweredScheme s = PoweredScheme::sample(spec, x.size(), rng.next_seed(), kDefaultCapBudget, 0);
    if (s.collides(x, y)) ++est.hits;
  }
  if (trials > 0) {
    est.p_hat = static_cast<double>(est.hits) / static_cast<double>(trials);
    est.stderr_ = std::sqrt(est.p_hat * (1.0 - est.p_hat) / static_cast<double>(trials));
  }
  return est;
}

McEstimate collision_prob_mc(double rho, double t, double gamma, double zeta, unsigned k, std::uint64_t trials,
                             Rng& rng, Family family, std::size_t d) {
  if (std::abs(rho) > 1.0) fail(ErrorCode::BadParams, "|rho| must be <= 1");
  if (d < 2) fail(ErrorCode::BadParams, "Monte Carlo pair needs d >= 2");
  SchemeSpec spec{0.0, 0.0, zeta, k};
  switch (family) {
    case Family::Gamma: spec = SchemeSpec::gamma_family(t, gamma, zeta, k); break;
    case Family::PlusOnly: spec.t_plus = t; break;
    case Family::MinusOnly: spec.t_minus = t; break;
  }
  std::vector<double> x(d, 0.0), y(d, 0.0);
  x[0] = 1.0;
  y[0] = rho;
  y[1] = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  return collision_prob_mc(spec, x, y, trials, rng);
}

// ---------------------------------------------------------------- bounds

double collision_constant_c1(double delta, double zeta) {
  const double lower_coeff = std::numbers::sqrt2 * (1.0 - zeta) * delta * delta / (148.0 * std::sqrt(std::numbers::pi));
  const double upper_coeff = 2.0 / (std::sqrt(std::numbers::pi) * std::sqrt(delta));
  return std::max(1.0 / (lower_coeff * lower_coeff), upper_coeff * upper_coeff);
}

namespace {

CollisionBounds plus_bounds(double rho, double t, double zeta, double delta) {
  const double center_lo = std::numbers::sqrt2 * (1.0 - zeta) * delta * delta / (148.0 * std::sqrt(std::numbers::pi));
  const double center_hi = 2.0 / (std::sqrt(std::numbers::pi) * std::sqrt(delta));
  const double t2 = t * t;
  if (rho < -1.0 + delta - 1e-12) return {0.0, center_hi * std::exp(-((2.0 - delta) / delta) * t2 / 2.0)};
  if (rho > 1.0 - delta + 1e-12) {
    const double c = (1.0 - zeta) / (2.0 * std::sqrt(2.0 * std::numbers::pi) * (1.0 + std::numbers::sqrt2));
    return {c * std::exp(-(delta / (2.0 - delta)) * t2 / 2.0), 1.0};
  }
  const double e = std::exp(-((1.0 - rho) / (1.0 + rho)) * t2 / 2.0);
  return {center_lo * e, center_hi * e};
}

}  // namespace

CollisionBounds collision_bounds(double rho, double t, double gamma, double zeta, double delta, Family family) {
  if (!(delta > 0.0 && delta < 1.0)) fail(ErrorCode::BadDelta, "delta must lie in (0,1)");
  if (!(t > 0.0) || !(zeta > 0.0 && zeta < 1.0)) fail(ErrorCode::BadParams, "need t > 0 and zeta in (0,1)");
  if (std::abs(rho) > 1.0) fail(ErrorCode::BadParams, "|rho| must be <= 1");
  switch (family) {
    case Family::PlusOnly: return plus_bounds(rho, t, zeta, delta);
    case Family::MinusOnly: return plus_bounds(-rho, t, zeta, delta);
    case Family::Gamma: break;
  }
  if (!(gamma > 0.0)) fail(ErrorCode::BadParams, "gamma must be positive");
  const double c1 = collision_constant_c1(delta, zeta);
  if (std::abs(rho) <= 1.0 - delta + 1e-12) {
    const double e = std::exp(-((1.0 - rho) / (1.0 + rho) + gamma * gamma * (1.0 + rho) / (1.0 - rho)) * t * t / 2.0);
    return {e / c1, c1 * e};
  }
  const double s = rho > 0.0 ? gamma * t : t;
  return {0.0, std::sqrt(c1) * std::exp(-((2.0 - delta) / delta) * s * s / 2.0)};
}

bool within_bounds(const McEstimate& est, const CollisionBounds& b, double sigmas) {
  const double n = static_cast<double>(std::max<std::uint64_t>(est.trials, 1));
  const auto sd_at = [&](double q) {
    q = std::clamp(q, 0.0, 1.0);
    return std::max(est.stderr_, std::sqrt(q * (1.0 - q) / n));
  };
  return est.p_hat >= b.lower - sigmas * sd_at(b.lower) && est.p_hat <= b.upper + sigmas * sd_at(b.upper);
}

}  // namespace mrhbe

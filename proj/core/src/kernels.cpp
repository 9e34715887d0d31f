#include "mrhbe/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include <json.hpp>

#include "mrhbe/error.hpp"

namespace mrhbe {

ConvexPhi::ConvexPhi(Fn value, Fn derivative, double lipschitz, double lo, double hi, std::string label)
    : base_(std::make_shared<const Base>(Base{std::move(value), std::move(derivative), std::move(label)})),
      lipschitz_(lipschitz),
      lo_(lo),
      hi_(hi) {
  if (!base_->value || !base_->derivative) fail(ErrorCode::BadParams, "kernel callbacks must be set");
  if (!(lo < hi)) fail(ErrorCode::BadParams, "kernel domain must satisfy lo < hi");
  if (!(lipschitz >= 0.0) || !std::isfinite(lipschitz)) fail(ErrorCode::BadParams, "Lipschitz constant must be finite and >= 0");
  compute_extrema();
}

ConvexPhi::ConvexPhi(std::shared_ptr<const Base> base, double alpha, double offset, double lipschitz,
                     double lo, double hi)
    : base_(std::move(base)), alpha_(alpha), offset_(offset), lipschitz_(lipschitz), lo_(lo), hi_(hi) {
  compute_extrema();
}

void ConvexPhi::compute_extrema() {
  const double va = value(lo_);
  const double vb = value(hi_);
  if (!std::isfinite(va) || !std::isfinite(vb)) fail(ErrorCode::BadParams, "kernel not finite on its domain");
  phi_max_ = std::max(va, vb);
  // Golden-section search needs only convexity of the value callback.
  constexpr double kInvPhi = 0.6180339887498949;
  double a = lo_, b = hi_;
  double c = b - kInvPhi * (b - a), d = a + kInvPhi * (b - a);
  double fc = value(c), fd = value(d);
  for (int it = 0; it < 200 && (b - a) > 1e-15 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = value(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = value(d);
    }
  }
  phi_min_ = std::min({va, vb, fc, fd, value(0.5 * (a + b))});
}

ConvexPhi ConvexPhi::offset_by(double delta) const {
  ConvexPhi out = *this;
  out.offset_ -= delta;
  out.phi_max_ -= delta;
  out.phi_min_ -= delta;
  return out;
}

ConvexPhi ConvexPhi::compose_scale(double alpha) const {
  if (alpha == 0.0 || !std::isfinite(alpha)) fail(ErrorCode::BadParams, "scale must be finite and nonzero");
  double a = lo_ / alpha, b = hi_ / alpha;
  if (a > b) std::swap(a, b);
  return ConvexPhi(base_, alpha_ * alpha, offset_, std::abs(alpha) * lipschitz_, a, b);
}

ConvexPhi ConvexPhi::restrict_to(double a, double b) const {
  if (!(a < b) || a < lo_ - 1e-12 || b > hi_ + 1e-12)
    fail(ErrorCode::DomainExceeded, "restriction must lie inside the stored domain");
  a = std::max(a, lo_);
  b = std::min(b, hi_);
  double lip = lipschitz_;
  if (a > lo_ || b < hi_) {
    // Derivative of a convex function is monotone, so its extremes sit at the ends.
    lip = std::min(lip, std::max(std::abs(derivative(a)), std::abs(derivative(b))));
  }
  return ConvexPhi(base_, alpha_, offset_, lip, a, b);
}

namespace {

double softplus_neg(double z) {
  // log(1 + e^{−z}) without overflow.
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::BadParams, what);
}

}  // namespace

ConvexPhi builtin(const std::string& name, const KernelParams& p) {
  require(p.r2 > 0.0 && std::isfinite(p.r2), "r2 must be positive");
  require(p.domain > 0.0 && std::isfinite(p.domain), "domain half-width must be positive");
  const double r2 = p.r2, D = p.domain;
  if (name == "exp-inner") {
    return ConvexPhi([r2](double s) { return r2 * s; }, [r2](double) { return r2; }, r2, -D, D, name);
  }
  if (name == "gaussian") {
    return ConvexPhi([r2](double s) { return 2.0 * r2 * (s - 1.0); }, [r2](double) { return 2.0 * r2; },
                     2.0 * r2, -D, D, name);
  }
  if (name == "cauchy") {
    require(1.0 + 2.0 * r2 * (1.0 + D) > 0.0, "cauchy undefined on domain");
    return ConvexPhi([r2](double s) { return -std::log1p(2.0 * r2 * (1.0 - s)); },
                     [r2](double s) { return 2.0 * r2 / (1.0 + 2.0 * r2 * (1.0 - s)); },
                     2.0 * r2 / std::max(1e-300, 1.0 + 2.0 * r2 * (1.0 - D)), -D, D, name);
  }
  if (name == "logistic") {
    return ConvexPhi([r2](double s) { return -softplus_neg(r2 * s); },
                     [r2](double s) { return r2 / (1.0 + std::exp(r2 * s)); }, r2, -D, D, name);
  }
  if (name == "polynomial") {
    require(p.c > 1.0, "polynomial requires c > 1");
    require(p.k >= 0.0, "polynomial requires k >= 0");
    require(p.c > D, "polynomial requires c > domain half-width");
    const double k = p.k, c = p.c;
    return ConvexPhi([k, c, r2](double s) { return -k * std::log(r2 * (s + c)); },
                     [k, c](double s) { return -k / (s + c); }, k / (c - D), -D, D, name);
  }
  fail(ErrorCode::BadParams, "unknown kernel '" + name + "'");
}

ConvexPhi shift_nonpositive(const ConvexPhi& phi) {
  if (!std::isfinite(phi.phi_max())) fail(ErrorCode::BadParams, "phi_max not finite");
  if (phi.phi_max() == 0.0) return phi;
  return phi.offset_by(phi.phi_max());
}

ConvexPhi rescale(const ConvexPhi& phi, double alpha) {
  if (!(alpha > 0.0)) fail(ErrorCode::BadParams, "rescale factor must be positive");
  ConvexPhi out = phi.compose_scale(alpha);
  if (out.lo() > -1.0 + 1e-12 || out.hi() < 1.0 - 1e-12)
    fail(ErrorCode::DomainExceeded, "alpha*rho leaves the stored domain for some |rho| <= 1");
  return out;
}

ConvexPhi mirror(const ConvexPhi& phi) { return phi.compose_scale(-1.0); }

AuditReport audit(const ConvexPhi& phi, std::size_t grid_size) {
  AuditReport r;
  if (grid_size < 3) grid_size = 3;
  const double lo = phi.lo(), hi = phi.hi();
  const double h = (hi - lo) / static_cast<double>(grid_size - 1);
  std::vector<double> x(grid_size), v(grid_size);
  for (std::size_t i = 0; i < grid_size; ++i) {
    x[i] = (i + 1 == grid_size) ? hi : lo + h * static_cast<double>(i);
    v[i] = phi.value(x[i]);
  }
  double gmin = v[0], gmax = v[0];
  for (std::size_t i = 0; i < grid_size; ++i) {
    gmin = std::min(gmin, v[i]);
    gmax = std::max(gmax, v[i]);
    if (i + 1 < grid_size) {
      r.lipschitz_residual = std::max(r.lipschitz_residual, std::abs(v[i + 1] - v[i]) - phi.lipschitz() * (x[i + 1] - x[i]));
    }
    if (i > 0 && i + 1 < grid_size) {
      const double w = (x[i] - x[i - 1]) / (x[i + 1] - x[i - 1]);
      const double chord = (1.0 - w) * v[i - 1] + w * v[i + 1];
      r.convexity_residual = std::max(r.convexity_residual, v[i] - chord);
      const double step = std::min({1e-5 * (hi - lo), x[i] - lo, hi - x[i]});
      const double fd = (phi.value(x[i] + step) - phi.value(x[i] - step)) / (2.0 * step);
      r.derivative_residual = std::max(r.derivative_residual, std::abs(phi.derivative(x[i]) - fd));
    }
  }
  r.derivative_tolerance = std::max(1e-6, 1e-4 * phi.lipschitz());
  r.range_residual = std::abs((gmax - gmin) - phi.range());
  r.convex = r.convexity_residual <= 1e-9;
  r.lipschitz = r.lipschitz_residual <= 1e-9;
  r.derivative_consistent = r.derivative_residual <= r.derivative_tolerance;
  // The grid may miss an interior minimum by O(L·h).
  r.range_consistent = r.range_residual <= 1e-6 + phi.lipschitz() * h && phi.range() <= 2.0 * phi.lipschitz() * 0.5 * (hi - lo) + 1e-9;
  return r;
}

namespace {

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, ConvexPhi>& registry() {
  static std::map<std::string, ConvexPhi> r;
  return r;
}

}  // namespace

void register_custom(const std::string& name, const ConvexPhi& phi) {
  const AuditReport rep = audit(phi);
  if (!rep.passed()) fail(ErrorCode::BadParams, "custom kernel '" + name + "' failed audit");
  std::lock_guard lock(registry_mutex());
  registry().insert_or_assign(name, phi);
}

ConvexPhi find_custom(const std::string& name) {
  std::lock_guard lock(registry_mutex());
  const auto it = registry().find(name);
  if (it == registry().end()) fail(ErrorCode::BadParams, "no custom kernel named '" + name + "'");
  return it->second;
}

KernelSpec parse_kernel_spec(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadParams, std::string("kernel config is not valid JSON: ") + e.what());
  }
  KernelSpec spec;
  if (j.contains("custom")) {
    spec.custom = j.at("custom").get<std::string>();
    return spec;
  }
  const nlohmann::json& k = j.contains("kernel") ? j.at("kernel") : j;
  if (!k.is_object() || !k.contains("name")) fail(ErrorCode::BadParams, "kernel config needs a name");
  try {
    spec.name = k.at("name").get<std::string>();
    spec.params.r2 = k.value("r2", 1.0);
    spec.params.k = k.value("k", 1.0);
    spec.params.c = k.value("c", 2.0);
    spec.params.domain = k.value("domain", 1.0);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadParams, std::string("bad kernel field: ") + e.what());
  }
  return spec;
}

std::string kernel_spec_json(const KernelSpec& spec) {
  nlohmann::json j;
  if (!spec.custom.empty()) {
    j["custom"] = spec.custom;
  } else {
    j["kernel"] = {{"name", spec.name}, {"r2", spec.params.r2}, {"k", spec.params.k},
                   {"c", spec.params.c}, {"domain", spec.params.domain}};
  }
  return j.dump();
}

ConvexPhi make_kernel(const KernelSpec& spec) {
  if (!spec.custom.empty()) return find_custom(spec.custom);
  return builtin(spec.name, spec.params);
}

}  // namespace mrhbe

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>

namespace mrhbe {

// Convex function φ of the inner product, with the metadata the hashing
// construction consumes. Immutable; copies share state.
//
// Internally value(ρ) = base(α·ρ) + offset so that shifting, rescaling and
// mirroring collapse into two numbers instead of nesting closures.
class ConvexPhi {
 public:
  using Fn = std::function<double(double)>;

  ConvexPhi(Fn value, Fn derivative, double lipschitz, double lo = -1.0, double hi = 1.0,
            std::string label = "custom");

  double value(double rho) const { return base_->value(alpha_ * rho) + offset_; }
  double operator()(double rho) const { return value(rho); }
  // Right derivative at interior kinks; one-sided at the domain ends.
  double derivative(double rho) const { return alpha_ * base_->derivative(alpha_ * rho); }

  double lipschitz() const noexcept { return lipschitz_; }
  double range() const noexcept { return phi_max_ - phi_min_; }
  double phi_max() const noexcept { return phi_max_; }
  double phi_min() const noexcept { return phi_min_; }
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  const std::string& label() const noexcept { return base_->label; }

  // Same function with value lowered by `delta`.
  ConvexPhi offset_by(double delta) const;
  // ρ ↦ φ(αρ) over the preimage of the current domain; α may be negative.
  ConvexPhi compose_scale(double alpha) const;
  // Narrow the domain to [a,b] ⊆ [lo,hi]; L tightened to the endpoint slopes.
  ConvexPhi restrict_to(double a, double b) const;

 private:
  struct Base {
    Fn value;
    Fn derivative;
    std::string label;
  };
  ConvexPhi(std::shared_ptr<const Base> base, double alpha, double offset, double lipschitz,
            double lo, double hi);
  void compute_extrema();

  std::shared_ptr<const Base> base_;
  double alpha_ = 1.0;
  double offset_ = 0.0;
  double lipschitz_ = 0.0;
  double lo_ = -1.0;
  double hi_ = 1.0;
  double phi_max_ = 0.0;
  double phi_min_ = 0.0;
};

struct KernelParams {
  double r2 = 1.0;  // squared sphere radius r²
  double k = 1.0;   // polynomial degree
  double c = 2.0;   // polynomial offset, c > 1
  // Half-width D of the domain [−D, D]; 1 for the sphere.
  double domain = 1.0;
};

// Table of log-convex kernels written as functions of ρ for a sphere of radius r:
//   exp-inner   r²ρ                    L = r²
//   gaussian    2r²(ρ−1)               L = 2r²
//   cauchy      −log(1+2r²(1−ρ))       L = 2r²
//   logistic    −log(1+e^{−r²ρ})       L = r²
//   polynomial  −k·log(r²(ρ+c))        L = k/(c−1)
ConvexPhi builtin(const std::string& name, const KernelParams& params = {});

ConvexPhi shift_nonpositive(const ConvexPhi& phi);
// ρ ↦ φ(αρ). The result's domain is the preimage of φ's domain and must still
// cover [−1,1]; otherwise DomainExceeded.
ConvexPhi rescale(const ConvexPhi& phi, double alpha);
// ρ ↦ φ(−ρ).
ConvexPhi mirror(const ConvexPhi& phi);

struct AuditReport {
  double convexity_residual = 0.0;   // max of φ(mid) − chord, should be ≤ 1e−9
  double lipschitz_residual = 0.0;   // max of |Δφ| − L·|Δρ|, should be ≤ 1e−9
  double derivative_residual = 0.0;  // max |φ' − central difference|
  double derivative_tolerance = 0.0;
  double range_residual = 0.0;       // |R(φ) − grid range|
  bool convex = true;
  bool lipschitz = true;
  bool derivative_consistent = true;
  bool range_consistent = true;
  bool passed() const noexcept { return convex && lipschitz && derivative_consistent && range_consistent; }
};

AuditReport audit(const ConvexPhi& phi, std::size_t grid_size = 10001);

// Named user kernels; registration audits and throws BadParams on failure.
void register_custom(const std::string& name, const ConvexPhi& phi);
ConvexPhi find_custom(const std::string& name);

struct KernelSpec {
  std::string name;    // builtin name, empty when custom is set
  KernelParams params;
  std::string custom;  // registry reference
};

// Accepts {"kernel": {"name", "r2", "k", "c"}}, {"custom": "ref"} or the bare
// inner object.
KernelSpec parse_kernel_spec(const std::string& json_text);
std::string kernel_spec_json(const KernelSpec& spec);
ConvexPhi make_kernel(const KernelSpec& spec);

}  // namespace mrhbe

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mrhbe/mr_hbe.hpp"

namespace mrhbe {

using Sampler = std::function<double(Rng&)>;

// An unbiased nonnegative estimator with relative variance at most v_of(μ).
// v_of must be nonincreasing and μ²·v_of(μ) nondecreasing.
struct VBounded {
  Sampler sample;
  std::function<double(double)> v_of;
  double cost = 1.0;  // work per sample, informational
};

// Median over groups (odd) of means of per_group samples each.
double median_of_means(const Sampler& sampler, std::size_t per_group, std::size_t groups, Rng& rng);

// 2⌈4.5·ln((log₂(1/τ)+2)/χ)⌉ + 1
std::size_t mom_groups(double tau, double chi);
// max{1, ⌈9v/ε²⌉}
std::size_t mom_per_group(double v, double eps);
// Guesses 1, 1/2, ... down to the first one at or below τ/2.
std::vector<double> guess_levels(double tau);

struct LevelInfo {
  double guess = 0.0;
  std::size_t per_group = 0;
  std::size_t groups = 0;
  double estimate = 0.0;
  bool accepted = false;
};

struct QueryResult {
  bool below_threshold = true;
  double value = 0.0;  // set only for an estimate, and then ≥ τ/2
  std::size_t samples_used = 0;
  std::vector<LevelInfo> levels;

  bool is_estimate() const noexcept { return !below_threshold; }
};

// Accepts the first level whose median-of-means reaches its guess. An accepted
// value below τ/2 is reported as BelowThreshold.
QueryResult adaptive_estimate(const VBounded& est, double eps, double tau, double chi, Rng& rng);

enum class VarianceSource { Theory, Pilot };
const char* to_string(VarianceSource v);
VarianceSource parse_variance_source(const std::string& s);

struct MainOptions {
  double eps = 0.3;
  double tau = 0.1;
  double chi = 0.1;
  VarianceSource variance = VarianceSource::Pilot;
  std::size_t pilot_queries = 4;  // data points used as pilot queries
  std::size_t pilot_draws = 200;
  double pilot_safety = 4.0;
  // Estimated table memory of all replicas; larger R throws ReplicaBudgetExceeded.
  std::size_t memory_budget = std::size_t{1} << 30;
  unsigned threads = 0;  // 0: hardware concurrency
  // Replicas regenerate Gaussian rows on demand, so only tables cost memory.
  BuildOptions build = [] {
    BuildOptions o;
    o.materialize_budget = 0;
    return o;
  }();
};

// R independent hash replicas answering adaptive queries; sample j of a query
// uses replica (start + j) mod R, so no level reuses a table.
class MainStructure {
 public:
  static MainStructure build(const ConvexPhi& phi, Dataset dataset, const MainOptions& opts, Rng& rng);

  QueryResult query(std::span<const double> y, Rng& rng) const;
  // The variance bound in use: pilot 4κμ^{−1/2}, or the scale-free bound.
  double v_of(double mu) const;

  const MainOptions& options() const noexcept { return opts_; }
  const SchemeBundle& bundle() const noexcept { return *bundle_; }
  const Dataset& dataset() const noexcept { return *dataset_; }
  std::size_t replicas() const noexcept { return replicas_.size(); }
  double kappa() const noexcept { return kappa_; }
  std::size_t groups() const noexcept { return groups_; }

 private:
  MainOptions opts_;
  std::shared_ptr<const SchemeBundle> bundle_;
  std::shared_ptr<const Dataset> dataset_;
  std::vector<MrHbeState> replicas_;
  double kappa_ = 0.0;  // pilot only
  std::size_t groups_ = 0;
};

// Replica count the structure would need and the table bytes per replica.
struct ReplicaPlan {
  double replicas = 0.0;  // may exceed any integer type under the theory bound
  double bytes_per_replica = 0.0;
};
ReplicaPlan replica_plan(const SchemeBundle& bundle, std::size_t n, const std::function<double(double)>& v_of,
                         double eps, double tau, double chi);

}  // namespace mrhbe

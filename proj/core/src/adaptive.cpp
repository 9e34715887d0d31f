#include "mrhbe/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mrhbe/error.hpp"
#include "parallel.hpp"

namespace mrhbe {

double median_of_means(const Sampler& sampler, std::size_t per_group, std::size_t groups, Rng& rng) {
  if (per_group == 0) fail(ErrorCode::BadParams, "per_group must be >= 1");
  if (groups == 0 || groups % 2 == 0) fail(ErrorCode::BadParams, "groups must be odd");
  std::vector<double> means(groups);
  for (double& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < per_group; ++i) s += sampler(rng);
    m = s / static_cast<double>(per_group);
  }
  const auto mid = means.begin() + static_cast<std::ptrdiff_t>(groups / 2);
  std::nth_element(means.begin(), mid, means.end());
  return *mid;
}

namespace {

void check_params(double eps, double tau, double chi) {
  if (!(eps > 0.0 && eps < 1.0)) fail(ErrorCode::BadParams, "eps must lie in (0,1)");
  if (!(tau > 0.0 && tau <= 1.0)) fail(ErrorCode::BadParams, "tau must lie in (0,1]");
  if (!(chi > 0.0 && chi < 1.0)) fail(ErrorCode::BadParams, "chi must lie in (0,1)");
}

}  // namespace

std::size_t mom_groups(double tau, double chi) {
  const double levels = std::log2(1.0 / tau) + 2.0;
  return 2 * static_cast<std::size_t>(std::ceil(4.5 * std::log(levels / chi))) + 1;
}

std::size_t mom_per_group(double v, double eps) {
  const double k = std::ceil(9.0 * v / (eps * eps));
  if (!(k < 1e18)) fail(ErrorCode::ReplicaBudgetExceeded, "per-group sample count overflows");
  return std::max<std::size_t>(1, static_cast<std::size_t>(k));
}

std::vector<double> guess_levels(double tau) {
  std::vector<double> g{1.0};
  while (g.back() > tau / 2.0) g.push_back(g.back() / 2.0);
  return g;
}

QueryResult adaptive_estimate(const VBounded& est, double eps, double tau, double chi, Rng& rng) {
  check_params(eps, tau, chi);
  if (!est.sample || !est.v_of) fail(ErrorCode::BadParams, "estimator needs a sampler and a variance bound");
  QueryResult r;
  const std::size_t groups = mom_groups(tau, chi);
  for (double g : guess_levels(tau)) {
    LevelInfo lv{g, mom_per_group(est.v_of(g), eps), groups, 0.0, false};
    lv.estimate = median_of_means(est.sample, lv.per_group, groups, rng);
    r.samples_used += lv.per_group * groups;
    lv.accepted = lv.estimate >= g;
    r.levels.push_back(lv);
    if (!lv.accepted) continue;
    // Half-guess guard: the last level sits at or below τ/2.
    if (lv.estimate >= tau / 2.0) {
      r.below_threshold = false;
      r.value = lv.estimate;
    }
    return r;
  }
  return r;
}

const char* to_string(VarianceSource v) { return v == VarianceSource::Theory ? "theory" : "pilot"; }

VarianceSource parse_variance_source(const std::string& s) {
  if (s == "theory") return VarianceSource::Theory;
  if (s == "pilot") return VarianceSource::Pilot;
  fail(ErrorCode::BadParams, "unknown variance source '" + s + "' (theory|pilot)");
}

ReplicaPlan replica_plan(const SchemeBundle& bundle, std::size_t n, const std::function<double(double)>& v_of,
                         double eps, double tau, double chi) {
  const double g_min = guess_levels(tau).back();
  const double per_group = std::max(1.0, std::ceil(9.0 * v_of(g_min) / (eps * eps)));
  ReplicaPlan p;
  p.replicas = per_group * static_cast<double>(mom_groups(tau, chi));
  p.bytes_per_replica = estimated_table_bytes(bundle, n);
  return p;
}

MainStructure MainStructure::build(const ConvexPhi& phi, Dataset dataset, const MainOptions& opts, Rng& rng) {
  check_params(opts.eps, opts.tau, opts.chi);
  if (dataset.empty()) fail(ErrorCode::EmptyDataset, "cannot build on an empty dataset");
  if (!dataset.is_unit(1e-9)) fail(ErrorCode::BadParams, "dataset points must be unit norm");
  MainStructure m;
  m.opts_ = opts;
  m.opts_.build.beta = 0.5;
  m.bundle_ = SchemeBundle::build(phi, dataset.dim(), m.opts_.build);
  m.dataset_ = std::make_shared<const Dataset>(std::move(dataset));
  m.groups_ = mom_groups(opts.tau, opts.chi);

  if (opts.variance == VarianceSource::Pilot) {
    if (opts.pilot_draws < 100) fail(ErrorCode::BadParams, "pilot needs at least 100 draws");
    const MrHbeState probe = MrHbeState::build(m.bundle_, m.dataset_, rng.next_seed(), false);
    bool any = false;
    for (std::size_t q = 0; q < std::max<std::size_t>(opts.pilot_queries, 1); ++q) {
      const auto i = static_cast<std::size_t>(rng.below(m.dataset_->size()));
      const Moments mo = empirical_moments(probe, m.dataset_->row(i), opts.pilot_draws, rng, true);
      if (!(mo.mean > 0.0)) continue;
      any = true;
      m.kappa_ = std::max(m.kappa_, std::max(mo.relvar, 0.0) * std::sqrt(mo.mean));
    }
    if (!any) fail(ErrorCode::BadParams, "every pilot query returned only zero draws");
  }

  const ReplicaPlan plan = replica_plan(*m.bundle_, m.dataset_->size(), [&m](double mu) { return m.v_of(mu); },
                                        opts.eps, opts.tau, opts.chi);
  if (!(plan.replicas * plan.bytes_per_replica <= static_cast<double>(opts.memory_budget))) {
    fail(ErrorCode::ReplicaBudgetExceeded, "needs " + std::to_string(plan.replicas) + " replicas of about " +
                                               std::to_string(static_cast<long long>(plan.bytes_per_replica)) +
                                               " bytes, over the memory budget");
  }

  const auto R = static_cast<std::size_t>(plan.replicas);
  const std::uint64_t master = rng.next_seed();
  m.replicas_.resize(R);
  // Seeds depend only on the replica index, so the result ignores threading.
  detail::parallel_for(R, opts.threads, [&](std::size_t r) {
    m.replicas_[r] = MrHbeState::build(m.bundle_, m.dataset_, derive_seed(master, r, 2), true);
  });
  return m;
}

double MainStructure::v_of(double mu) const {
  if (opts_.variance == VarianceSource::Pilot) return opts_.pilot_safety * kappa_ / std::sqrt(mu);
  // Uniform sampling of weights in [0,1] has relative variance below 1/μ.
  if (bundle_->config().fallback) return 1.0 / mu;
  return relvar_bound(0.5, bundle_->config().log_m_phi, mu).relvar;
}

QueryResult MainStructure::query(std::span<const double> y, Rng& rng) const {
  if (replicas_.empty()) fail(ErrorCode::NotBuilt, "structure is not built");
  std::size_t cursor = static_cast<std::size_t>(rng.below(replicas_.size()));
  VBounded est;
  est.v_of = [this](double mu) { return v_of(mu); };
  est.sample = [&](Rng& r) {
    const double v = draw(replicas_[cursor], y, r).value;
    cursor = (cursor + 1) % replicas_.size();
    return v;
  };
  return adaptive_estimate(est, opts_.eps, opts_.tau, opts_.chi, rng);
}

}  // namespace mrhbe

// mrhbe: generate planted data, build and query estimators, run the
// sample-count benchmark and the numerical verifications.
//
// Exit status: 0 when every enabled check passes, 1 when a check fails,
// 2 on usage or input errors.

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrhbe/adaptive.hpp"
#include "mrhbe/convex_approx.hpp"
#include "mrhbe/error.hpp"
#include "mrhbe/euclidean.hpp"
#include "mrhbe/mr_hbe.hpp"
#include "mrhbe/oracle_bench.hpp"
#include "mrhbe/sphere_hash.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace mrhbe;

struct KernelFlags {
  std::string name = "gaussian";
  double r2 = 2.0;
  double k = 1.0;
  double c = 2.0;
  double domain = 1.0;
  std::string json_file;

  void add(CLI::App* app) {
    app->add_option("--kernel", name, "builtin kernel name")->capture_default_str();
    app->add_option("--r2", r2, "squared radius r^2")->capture_default_str();
    app->add_option("--k", k, "polynomial degree")->capture_default_str();
    app->add_option("--c", c, "polynomial offset")->capture_default_str();
    app->add_option("--domain", domain, "half-width of the kernel domain")->capture_default_str();
    app->add_option("--kernel-json", json_file, "kernel spec JSON file; overrides the flags");
  }

  KernelSpec spec() const {
    if (!json_file.empty()) {
      std::ifstream in(json_file);
      if (!in) fail(ErrorCode::IoError, "cannot open " + json_file);
      std::stringstream ss;
      ss << in.rdbuf();
      return parse_kernel_spec(ss.str());
    }
    KernelSpec s;
    s.name = name;
    s.params = {.r2 = r2, .k = k, .c = c, .domain = domain};
    return s;
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << text;
}

std::string csv_row(std::span<const double> v) {
  std::ostringstream o;
  o.precision(17);
  for (std::size_t j = 0; j < v.size(); ++j) o << (j ? "," : "") << v[j];
  return o.str();
}

std::vector<std::vector<double>> read_queries(const std::string& path) {
  const Dataset q = load_dataset(path, DatasetFormat::Auto);
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < q.size(); ++i) out.emplace_back(q.row(i).begin(), q.row(i).end());
  return out;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(std::stod(item));
  if (out.empty()) fail(ErrorCode::BadParams, "empty grid '" + text + "'");
  return out;
}

BuildOptions build_options(double beta, double zeta, const std::string& calibrate) {
  BuildOptions o;
  o.beta = beta;
  o.zeta = zeta;
  o.mode = parse_weight_mode(calibrate);
  return o;
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  KernelFlags kernel;
  std::size_t n = 2000, d = 8;
  double mu = 0.05, spread = 0.02;
  std::uint64_t seed = 1;
  std::string out = "data.mrhb", query_out = "query.csv";
};

int run_gen(const GenArgs& a) {
  const PlantedInstance inst = gen_planted(a.n, a.d, a.mu, make_kernel(a.kernel.spec()), a.seed, a.spread);
  save_dataset(inst.dataset, a.out);
  write_text(a.query_out, csv_row(inst.query) + "\n");
  std::cout << json{{"data", a.out}, {"query", a.query_out}, {"n", a.n}, {"d", a.d}, {"target_mu", inst.target_mu},
                    {"achieved_mu", inst.achieved_mu}, {"near", inst.near}}
                   .dump(2)
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- build

struct BuildArgs {
  KernelFlags kernel;
  std::string data, out = "state.mrhs", space = "sphere", p0 = "const", calibrate = "exact";
  double beta = 0.5, zeta = kDefaultZeta;
  std::optional<double> qlo, qhi;
  std::uint64_t seed = 1;
  unsigned threads = 0;
};

int run_build(const BuildArgs& a) {
  const Dataset ds = load_dataset(a.data);
  const KernelSpec spec = a.kernel.spec();
  const BuildOptions opts = build_options(a.beta, a.zeta, a.calibrate);
  if (a.space == "sphere") {
    const MrHbeState s = MrHbeState::build(spec, ds.is_unit() ? ds : ds.normalized(), a.seed, opts);
    save_state(s, a.out);
    const ScaleFreeConfig& c = s.bundle().config();
    std::cout << json{{"out", a.out},          {"n", ds.size()},           {"d", ds.dim()},
                      {"kernel", json::parse(kernel_spec_json(spec))},       {"anchors", s.bundle().size()},
                      {"k_star", c.k_star},    {"log_m_phi", c.log_m_phi}, {"fallback", c.fallback}}
                     .dump(2)
              << "\n";
    return 0;
  }
  if (a.space != "euclidean") fail(ErrorCode::BadParams, "space must be sphere or euclidean");
  double R = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) R = std::max(R, norm(ds.row(i)));
  if (a.qhi) R = std::max(R, *a.qhi);
  EuclideanOptions eo;
  eo.build = opts;
  eo.threads = a.threads;
  if (a.qlo && a.qhi) eo.query_norms = std::make_pair(*a.qlo, *a.qhi);
  const LogLipschitzP0 p0 = parse_p0(a.p0, R);
  const EuclideanEstimator est = EuclideanEstimator::build(make_kernel(spec), p0, ds, eo, a.seed);
  const AnnulusPartition& p = est.partition();
  json shells = json::array();
  for (std::size_t i = 1; i <= p.annuli(); ++i) shells.push_back(est.members(i).size());
  std::cout << json{{"space", "euclidean"}, {"p0", p0.label}, {"q", p0.q}, {"H", p0.H},
                    {"r0", p.r0},           {"R", p.R},        {"gamma", p.gamma},
                    {"k_star", p.k_star},   {"annuli", p.annuli()}, {"w_max", est.w_max()},
                    {"pairs_built", est.built_pairs()}, {"shell_sizes", shells}}
                   .dump(2)
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- query

struct QueryArgs {
  std::string state, query_file, variance = "pilot", out;
  MainOptions main;
  std::uint64_t seed = 1;
};

int run_query(const QueryArgs& a) {
  const MrHbeState s = load_state(a.state);
  if (!s.kernel_spec()) fail(ErrorCode::BadParams, "state has no kernel spec");
  MainOptions o = a.main;
  o.variance = parse_variance_source(a.variance);
  o.build = s.bundle().options();
  o.build.materialize_budget = a.main.build.materialize_budget;
  Rng rng(a.seed);
  const MainStructure m = MainStructure::build(make_kernel(*s.kernel_spec()), s.dataset(), o, rng);
  json results = json::array();
  for (const auto& y : read_queries(a.query_file)) {
    const UnitPoint q = normalize(y);
    const QueryResult r = m.query(q.coords(), rng);
    json levels = json::array();
    for (const LevelInfo& l : r.levels) {
      levels.push_back({{"guess", l.guess}, {"estimate", l.estimate}, {"accepted", l.accepted}});
    }
    json row;
    if (r.is_estimate()) {
      row["estimate"] = r.value;
    } else {
      row["below_threshold"] = true;
    }
    row["samples_used"] = r.samples_used;
    row["levels"] = levels;
    results.push_back(row);
  }
  const json doc{{"replicas", m.replicas()}, {"groups", m.groups()}, {"kappa", m.kappa()}, {"queries", results}};
  if (!a.out.empty()) write_text(a.out, doc.dump(2) + "\n");
  std::cout << doc.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  KernelFlags kernel;
  std::size_t n = 4000, d = 8;
  double mu = 0.01;
  std::string methods = "mrhbe,uniform", out;
  BenchOptions bench;
};

int run_bench(const BenchArgs& a) {
  const ConvexPhi phi = make_kernel(a.kernel.spec());
  BenchOptions o = a.bench;
  o.methods.clear();
  std::stringstream ss(a.methods);
  for (std::string m; std::getline(ss, m, ',');) o.methods.push_back(parse_bench_method(m));
  const PlantedInstance inst = gen_planted(a.n, a.d, a.mu, phi, o.seed);
  const BenchReport r = bench_compare(inst, phi, o);
  if (!a.out.empty()) write_text(a.out, r.to_csv());
  json rows = json::array();
  bool all_met = true;
  for (const BenchRow& row : r.rows) {
    rows.push_back({{"method", row.method}, {"samples", row.samples}, {"met", row.met},
                    {"success_rate", row.success_rate}, {"eps_achieved", row.eps_achieved},
                    {"wall_ms", row.wall_ms}});
    all_met = all_met && row.met;
  }
  json doc{{"mu", inst.achieved_mu}, {"eps", o.eps}, {"rows", rows}};
  const BenchRow* m = r.find(BenchMethod::MrHbe);
  const BenchRow* u = r.find(BenchMethod::Uniform);
  if (m && u && m->met && u->met) doc["uniform_over_mrhbe"] = static_cast<double>(u->samples) / m->samples;
  std::cout << doc.dump(2) << "\n";
  return all_met ? 0 : 1;
}

// ---------------------------------------------------------------- verify

struct CollisionArgs {
  std::string t = "0.5,1,1.5,2", gamma = "0.5,1,2", rho = "-0.9,-0.5,0,0.5,0.9", out;
  double zeta = 0.25, delta = 0.1;
  std::uint64_t trials = 100000, seed = 1;
};

int run_verify_collision(const CollisionArgs& a) {
  Rng rng(a.seed);
  std::ostringstream csv;
  csv.precision(10);
  csv << "rho,t,gamma,k,p_hat,stderr,bound_lo,bound_hi,pass\n";
  std::size_t failed = 0, total = 0;
  for (double t : parse_grid(a.t)) {
    for (double g : parse_grid(a.gamma)) {
      for (double r : parse_grid(a.rho)) {
        const McEstimate e = collision_prob_mc(r, t, g, a.zeta, 1, a.trials, rng);
        const CollisionBounds b = collision_bounds(r, t, g, a.zeta, a.delta);
        const bool pass = within_bounds(e, b);
        failed += !pass;
        ++total;
        csv << r << ',' << t << ',' << g << ",1," << e.p_hat << ',' << e.stderr_ << ',' << b.lower << ','
            << b.upper << ',' << (pass ? 1 : 0) << '\n';
      }
    }
  }
  if (!a.out.empty()) write_text(a.out, csv.str());
  std::cout << json{{"check", "collision"}, {"cases", total}, {"failed", failed}}.dump(2) << "\n";
  return failed == 0 ? 0 : 1;
}

struct ApproxArgs {
  KernelFlags kernel;
  double eps = 0.5;
  std::size_t grid = 10000;
  std::uint64_t seed = 1;
  std::string out;
};

int run_verify_approx(const ApproxArgs& a) {
  const ConvexPhi phi = shift_nonpositive(make_kernel(a.kernel.spec()));
  InterpolationOptions io;
  io.grid = a.grid;
  const InterpolationSet set = build_interpolation_set(phi, a.eps, io);
  const FidelityReport f = verify_fidelity(set, a.grid);
  if (!a.out.empty()) {
    std::ostringstream csv;
    csv.precision(12);
    csv << "rho,phi,sup_h,gap\n";
    for (double r : verification_grid(set, a.grid)) {
      const double sh = set.sup_log_prob(r);
      csv << r << ',' << phi.value(r) << ',' << sh << ',' << phi.value(r) - sh << '\n';
    }
    write_text(a.out, csv.str());
  }
  const bool pass = f.min_gap >= -1e-8 && f.max_gap <= 2 * a.eps;
  std::cout << json{{"check", "approx"},       {"kernel", phi.label()}, {"eps", a.eps}, {"seed", a.seed},
                    {"anchors", set.anchors.size()}, {"min_gap", f.min_gap}, {"max_gap", f.max_gap},
                    {"pass", pass}}
                   .dump(2)
            << "\n";
  return pass ? 0 : 1;
}

struct MomentsArgs {
  KernelFlags kernel;
  std::size_t n = 200, d = 16, draws = 2000;
  double mu = 0.1;
  std::uint64_t seed = 1;
  bool fresh = true;
  std::string out;
};

int run_verify_moments(const MomentsArgs& a) {
  const KernelSpec spec = a.kernel.spec();
  const ConvexPhi phi = make_kernel(spec);
  const PlantedInstance inst = gen_planted(a.n, a.d, a.mu, phi, a.seed);
  const MrHbeState s = MrHbeState::build(spec, inst.dataset, derive_seed(a.seed, 1));
  Rng rng(derive_seed(a.seed, 2));
  const Moments m = empirical_moments(s, inst.query, a.draws, rng, a.fresh);
  const double mu = inst.achieved_mu;
  const ScaleFreeConfig& c = s.bundle().config();
  // Uniform fallback draws lie in [0,1], so E[Z²] ≤ μ.
  const double bound = c.fallback ? mu : relvar_bound(c.beta, c.log_m_phi, mu).second_moment;
  const bool unbiased = std::abs(m.mean - mu) <= 3 * m.stderr_;
  const bool bounded = m.second <= bound;
  const json doc{{"check", "moments"}, {"mu", mu},       {"mean", m.mean},       {"stderr", m.stderr_},
                 {"second", m.second}, {"bound", bound}, {"unbiased", unbiased}, {"bounded", bounded}};
  if (!a.out.empty()) write_text(a.out, doc.dump(2) + "\n");
  std::cout << doc.dump(2) << "\n";
  return unbiased && bounded ? 0 : 1;
}

struct RatioArgs {
  std::size_t d = 5, pairs = 10000;
  double r0 = 1.0, R = 4.0;
  std::string p0 = "pow-exp:0,neg-half-square";
  std::uint64_t seed = 1;
  std::string out;
};

int run_verify_ratio(const RatioArgs& a) {
  // w(x,y) = p0(‖x‖)·e^{⟨x,y⟩}
  const ConvexPhi phi = builtin("exp-inner", {.r2 = 1.0, .domain = a.R * a.R});
  const LogLipschitzP0 p0 = parse_p0(a.p0, a.R);
  const AnnulusPartition part = make_partition(a.r0, a.R, gamma_star(p0.q, p0.H, a.R, phi.lipschitz()));
  Rng rng(a.seed);
  const auto point = [&] {
    std::vector<double> x(a.d);
    for (double& v : x) v = rng.normal();
    const double s = (a.r0 + (a.R - a.r0) * rng.uniform()) / norm(x);
    for (double& v : x) v *= s;
    return x;
  };
  const auto log_w = [&](std::span<const double> x, std::span<const double> y) {
    return std::log(p0(norm(x))) + phi.value(dot(x, y));
  };
  std::ostringstream csv;
  csv.precision(12);
  csv << "norm_x,norm_y,log_ratio,log_lo,log_hi,pass\n";
  std::size_t failed = 0;
  double worst = 0.0;  // max |log ratio| / log hi
  for (std::size_t s = 0; s < a.pairs; ++s) {
    const auto x = point(), y = point();
    const auto [lo, hi] = ratio_bounds(x, y, part, phi, p0);
    const double lr = log_w(truncate(x, part).point, truncate(y, part).point) - log_w(x, y);
    const bool pass = lr >= std::log(lo) - 1e-12 && lr <= std::log(hi) + 1e-12 && hi <= std::exp(1.0) * (1 + 1e-12);
    failed += !pass;
    if (std::log(hi) > 0) worst = std::max(worst, std::abs(lr) / std::log(hi));
    csv << norm(x) << ',' << norm(y) << ',' << lr << ',' << std::log(lo) << ',' << std::log(hi) << ','
        << (pass ? 1 : 0) << '\n';
  }
  if (!a.out.empty()) write_text(a.out, csv.str());
  std::cout << json{{"check", "ratio"}, {"pairs", a.pairs}, {"gamma", part.gamma}, {"annuli", part.annuli()},
                    {"worst_fraction_of_envelope", worst}, {"failed", failed}}
                   .dump(2)
            << "\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hashing-based kernel density estimation toolkit"};
  app.require_subcommand(1);
  int status = 0;

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "write a planted-density instance");
  gen.kernel.add(g);
  g->add_option("--n", gen.n)->capture_default_str();
  g->add_option("--d", gen.d)->capture_default_str();
  g->add_option("--mu", gen.mu, "target density")->capture_default_str();
  g->add_option("--spread", gen.spread)->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--out", gen.out, "dataset file (binary)")->capture_default_str();
  g->add_option("--query-out", gen.query_out, "query file (CSV)")->capture_default_str();
  g->callback([&] { status = run_gen(gen); });

  BuildArgs build;
  auto* b = app.add_subcommand("build", "build an estimator and save or summarize it");
  build.kernel.add(b);
  b->add_option("--data", build.data)->required();
  b->add_option("--space", build.space, "sphere or euclidean")->capture_default_str();
  b->add_option("--p0", build.p0, "const, pow:q or pow-exp:q,f-id")->capture_default_str();
  b->add_option("--beta", build.beta)->capture_default_str();
  b->add_option("--zeta", build.zeta)->capture_default_str();
  b->add_option("--calibrate", build.calibrate, "exact, ideal or mc")->capture_default_str();
  b->add_option("--query-norm-lo", build.qlo);
  b->add_option("--query-norm-hi", build.qhi);
  b->add_option("--threads", build.threads)->capture_default_str();
  b->add_option("--seed", build.seed)->capture_default_str();
  b->add_option("--out", build.out, "state file (sphere only)")->capture_default_str();
  b->callback([&] { status = run_build(build); });

  QueryArgs query;
  auto* q = app.add_subcommand("query", "adaptive density queries against a saved state");
  q->add_option("--ds", query.state, "state file from build")->required();
  q->add_option("--query-file", query.query_file, "queries, CSV or binary")->required();
  q->add_option("--eps", query.main.eps)->capture_default_str();
  q->add_option("--tau", query.main.tau)->capture_default_str();
  q->add_option("--chi", query.main.chi)->capture_default_str();
  q->add_option("--variance-source", query.variance, "pilot or theory")->capture_default_str();
  q->add_option("--threads", query.main.threads)->capture_default_str();
  q->add_option("--seed", query.seed)->capture_default_str();
  q->add_option("--out", query.out, "JSON report");
  q->callback([&] { status = run_query(query); });

  BenchArgs bench;
  auto* be = app.add_subcommand("bench", "minimal sample counts of mrhbe and uniform sampling");
  bench.kernel.add(be);
  be->add_option("--n", bench.n)->capture_default_str();
  be->add_option("--d", bench.d)->capture_default_str();
  be->add_option("--mu", bench.mu)->capture_default_str();
  be->add_option("--eps", bench.bench.eps)->capture_default_str();
  be->add_option("--trials", bench.bench.trials)->capture_default_str();
  be->add_option("--methods", bench.methods)->capture_default_str();
  be->add_option("--threads", bench.bench.threads)->capture_default_str();
  be->add_option("--seed", bench.bench.seed)->capture_default_str();
  be->add_option("--out", bench.out, "CSV report");
  be->callback([&] { status = run_bench(bench); });

  auto* v = app.add_subcommand("verify", "numerical checks");
  v->require_subcommand(1);

  CollisionArgs col;
  auto* vc = v->add_subcommand("collision", "Monte Carlo collision rates against the analytic sandwich");
  vc->add_option("--t", col.t)->capture_default_str();
  vc->add_option("--gamma", col.gamma)->capture_default_str();
  vc->add_option("--rho-grid", col.rho)->capture_default_str();
  vc->add_option("--zeta", col.zeta)->capture_default_str();
  vc->add_option("--delta", col.delta)->capture_default_str();
  vc->add_option("--trials", col.trials)->capture_default_str();
  vc->add_option("--seed", col.seed)->capture_default_str();
  vc->add_option("--out", col.out, "CSV report");
  vc->callback([&] { status = run_verify_collision(col); });

  ApproxArgs ap;
  auto* va = v->add_subcommand("approx", "upper envelope of anchor log-probabilities against phi");
  ap.kernel.add(va);
  va->add_option("--eps", ap.eps)->capture_default_str();
  va->add_option("--grid", ap.grid)->capture_default_str();
  va->add_option("--seed", ap.seed, "recorded only; the check is deterministic")->capture_default_str();
  va->add_option("--out", ap.out, "CSV report");
  va->callback([&] { status = run_verify_approx(ap); });

  MomentsArgs mo;
  auto* vm = v->add_subcommand("moments", "mean and second moment of the estimator on a planted instance");
  mo.kernel.add(vm);
  vm->add_option("--n", mo.n)->capture_default_str();
  vm->add_option("--d", mo.d)->capture_default_str();
  vm->add_option("--mu", mo.mu)->capture_default_str();
  vm->add_option("--draws", mo.draws)->capture_default_str();
  vm->add_flag("!--reuse-tables", mo.fresh, "draw from one hash realisation");
  vm->add_option("--seed", mo.seed)->capture_default_str();
  vm->add_option("--out", mo.out, "JSON summary");
  vm->callback([&] { status = run_verify_moments(mo); });

  RatioArgs ra;
  auto* vr = v->add_subcommand("ratio", "norm-truncation envelope on random Euclidean pairs");
  vr->add_option("--d", ra.d)->capture_default_str();
  vr->add_option("--pairs", ra.pairs)->capture_default_str();
  vr->add_option("--r0", ra.r0)->capture_default_str();
  vr->add_option("--R", ra.R)->capture_default_str();
  vr->add_option("--p0", ra.p0)->capture_default_str();
  vr->add_option("--seed", ra.seed)->capture_default_str();
  vr->add_option("--out", ra.out, "CSV report");
  vr->callback([&] { status = run_verify_ratio(ra); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const mrhbe::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return status;
}

#include "mrhbe/mr_hbe.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "mrhbe/error.hpp"

namespace mrhbe {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

void check_query(const MrHbeState& s, std::span<const double> y) {
  if (!s.built()) fail(ErrorCode::NotBuilt, "estimator state is not built");
  if (y.size() != s.dataset().dim()) fail(ErrorCode::DimensionMismatch, "query dimension differs from the data");
  if (std::abs(norm(y) - 1.0) > 1e-9) fail(ErrorCode::BadParams, "query must be unit norm");
}

}  // namespace

// ---------------------------------------------------------------- config

ScaleFreeConfig scale_free_config(const ConvexPhi& phi, double beta, double zeta) {
  if (!(beta > 0.0 && beta <= 1.0)) fail(ErrorCode::BadParams, "beta must lie in (0,1]");
  ScaleFreeConfig c;
  c.beta = beta;
  c.zeta = zeta;
  c.lipschitz = phi.lipschitz();
  c.range = phi.range();
  c.phi_max = phi.phi_max();
  if (!(c.lipschitz > 0.0)) {
    c.delta_star = std::numeric_limits<double>::infinity();
    c.c_star = 1.0;
    c.fallback = true;
    return c;
  }
  c.delta_star = 1.0 / (2.0 * beta * c.lipschitz);
  c.c_star = collision_constant_c1(c.delta_star, zeta);
  const double log_c = std::log(c.c_star);
  if (log_c > 0.0) {
    const double k = std::cbrt(2.0 * beta * beta * c.lipschitz * c.range / log_c);
    c.k_star = static_cast<unsigned>(std::max(1.0, std::ceil(k)));
  }
  c.log_m_phi = 2.0 * c.k_star * log_c;
  c.fallback = beta * c.lipschitz / c.k_star < 2.0;
  return c;
}

const char* to_string(WeightMode m) {
  switch (m) {
    case WeightMode::Exact: return "exact";
    case WeightMode::Ideal: return "ideal";
    case WeightMode::Mc: return "mc";
  }
  return "?";
}

WeightMode parse_weight_mode(const std::string& s) {
  if (s == "exact") return WeightMode::Exact;
  if (s == "ideal") return WeightMode::Ideal;
  if (s == "mc") return WeightMode::Mc;
  fail(ErrorCode::BadParams, "unknown weight mode '" + s + "' (exact|ideal|mc)");
}

// ---------------------------------------------------------------- bundle

std::shared_ptr<const SchemeBundle> SchemeBundle::build(const ConvexPhi& phi, std::size_t dim,
                                                        const BuildOptions& opts) {
  if (dim < 2) fail(ErrorCode::BadParams, "dimension must be >= 2");
  std::shared_ptr<SchemeBundle> b(new SchemeBundle());
  b->phi_ = phi;
  b->dim_ = dim;
  b->opts_ = opts;
  b->config_ = scale_free_config(phi, opts.beta, opts.zeta);
  const ScaleFreeConfig& cfg = b->config_;
  if (cfg.fallback) return b;

  // φ̃ = β(φ − φ_max)/k*
  const double scale = cfg.beta / cfg.k_star;
  const double top = cfg.phi_max;
  const ConvexPhi smooth([phi, scale, top](double r) { return scale * (phi.value(r) - top); },
                         [phi, scale](double r) { return scale * phi.derivative(r); }, scale * cfg.lipschitz,
                         -1.0, 1.0, phi.label() + "~");
  b->interp_ = build_interpolation_set(smooth, 0.5);

  const double k = cfg.k_star;
  for (const LocalScheme& a : b->interp_->anchors) {
    AnchorScheme s{.local = a, .spec = {0.0, 0.0, opts.zeta, cfg.k_star}, .log_gate = 0.0, .m_plus = 0, .m_minus = 0};
    const double t = std::sqrt(a.t_sq);
    if (a.side == 0) {
      s.spec.t_plus = t;
      s.spec.t_minus = std::sqrt(a.gamma_sq) * t;
    } else {
      (a.side > 0 ? s.spec.t_plus : s.spec.t_minus) = t;
      s.log_gate = k * a.boundary_offset;
    }
    scheme_caps(s.spec, opts.cap_budget);
    if (s.spec.t_plus > 0.0) s.m_plus = caps_count(s.spec.t_plus, opts.zeta, opts.cap_budget);
    if (s.spec.t_minus > 0.0) s.m_minus = caps_count(s.spec.t_minus, opts.zeta, opts.cap_budget);
    b->anchors_.push_back(s);
  }

  if (opts.mode == WeightMode::Mc) {
    const std::size_t g = std::max<std::size_t>(opts.mc.grid, 2);
    Rng rng(opts.mc.seed);
    std::vector<double> x{1.0, 0.0}, y(2);
    for (std::size_t t = 0; t < b->anchors_.size(); ++t) {
      const AnchorScheme& a = b->anchors_[t];
      std::vector<double> row(g);
      for (std::size_t j = 0; j < g; ++j) {
        const double rho = -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(g - 1);
        y[0] = rho;
        y[1] = std::sqrt(std::max(0.0, 1.0 - rho * rho));
        Rng sub = rng.split(t * g + j);
        row[j] = collision_prob_mc(a.spec, x, y, opts.mc.trials, sub).p_hat * std::exp(a.log_gate);
      }
      b->mc_table_.push_back(std::move(row));
    }
  }
  return b;
}

double SchemeBundle::log_prob(std::size_t t, double rho) const {
  const AnchorScheme& a = anchors_[t];
  double lp = kNegInf;
  switch (opts_.mode) {
    case WeightMode::Exact: {
      double l = 0.0;
      if (a.m_plus) l += safe_log(plus_collision_prob(rho, a.spec.t_plus, a.m_plus));
      if (a.m_minus) l += safe_log(minus_collision_prob(rho, a.spec.t_minus, a.m_minus));
      lp = a.spec.k * l + a.log_gate;
      break;
    }
    case WeightMode::Ideal:
      // The boundary offset already is the gate exponent per copy.
      lp = a.spec.k * a.local.log_prob(rho);
      break;
    case WeightMode::Mc: {
      const std::vector<double>& row = mc_table_[t];
      const double pos = (std::clamp(rho, -1.0, 1.0) + 1.0) / 2.0 * static_cast<double>(row.size() - 1);
      const auto j = std::min(static_cast<std::size_t>(pos), row.size() - 2);
      const double f = pos - static_cast<double>(j);
      lp = safe_log((1.0 - f) * row[j] + f * row[j + 1]);
      break;
    }
  }
  return lp > kLogProbFloor ? lp : kNegInf;
}

void SchemeBundle::log_probs(double rho, std::span<double> out) const {
  for (std::size_t t = 0; t < anchors_.size(); ++t) out[t] = log_prob(t, rho);
}

// ---------------------------------------------------------------- tables

HashTable HashTable::from_keys(std::uint32_t width, std::vector<std::uint32_t> keys, std::vector<std::uint32_t> points) {
  if (keys.size() != static_cast<std::size_t>(width) * points.size()) {
    fail(ErrorCode::DimensionMismatch, "key rows do not match the point count");
  }
  std::vector<std::uint32_t> order(points.size());
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<std::uint32_t>(j);
  const auto row = [&](std::uint32_t j) { return keys.begin() + static_cast<std::ptrdiff_t>(j) * width; };
  // Ties keep point order, so a bucket lists its points ascending.
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return std::lexicographical_compare(row(a), row(a) + width, row(b), row(b) + width);
  });
  HashTable h;
  h.width = width;
  h.keys.reserve(keys.size());
  h.points.reserve(points.size());
  for (std::uint32_t j : order) {
    h.keys.insert(h.keys.end(), row(j), row(j) + width);
    h.points.push_back(points[j]);
  }
  return h;
}

std::span<const std::uint32_t> HashTable::find(std::span<const std::uint32_t> k) const {
  if (k.size() != width) fail(ErrorCode::DimensionMismatch, "bucket key width differs from the table");
  const auto less_row = [&](std::size_t j, std::span<const std::uint32_t> q) {
    const auto r = key(j);
    return std::lexicographical_compare(r.begin(), r.end(), q.begin(), q.end());
  };
  std::size_t lo = 0, hi = size();
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (less_row(mid, k)) lo = mid + 1; else hi = mid;
  }
  std::size_t end = lo;
  while (end < size() && std::equal(k.begin(), k.end(), key(end).begin())) ++end;
  return {points.data() + lo, end - lo};
}

std::size_t HashTable::bucket_count() const {
  std::size_t c = 0;
  for (std::size_t j = 0; j < size(); ++j) {
    if (j == 0 || !std::equal(key(j).begin(), key(j).end(), key(j - 1).begin())) ++c;
  }
  return c;
}

double estimated_table_bytes(const SchemeBundle& bundle, std::size_t n) {
  double bytes = 256.0;
  for (const AnchorScheme& a : bundle.anchors()) {
    bytes += static_cast<double>(n) * std::exp(a.log_gate) * 4.0 * (2.0 * a.spec.k + 1.0);
  }
  return bytes;
}

// ---------------------------------------------------------------- state

MrHbeState MrHbeState::build(const ConvexPhi& phi, Dataset dataset, std::uint64_t seed, const BuildOptions& opts) {
  if (dataset.empty()) fail(ErrorCode::EmptyDataset, "cannot build on an empty dataset");
  if (!dataset.is_unit(1e-9)) fail(ErrorCode::BadParams, "dataset points must be unit norm");
  auto bundle = SchemeBundle::build(phi, dataset.dim(), opts);
  return build(std::move(bundle), std::make_shared<const Dataset>(std::move(dataset)), seed, opts.eager_tables);
}

MrHbeState MrHbeState::build(const KernelSpec& kernel, Dataset dataset, std::uint64_t seed, const BuildOptions& opts) {
  MrHbeState s = build(make_kernel(kernel), std::move(dataset), seed, opts);
  s.kernel_ = kernel;
  return s;
}

MrHbeState MrHbeState::build(std::shared_ptr<const SchemeBundle> bundle, std::shared_ptr<const Dataset> dataset,
                             std::uint64_t seed, bool eager_tables) {
  if (!bundle || !dataset) fail(ErrorCode::NotBuilt, "bundle and dataset are required");
  if (dataset->empty()) fail(ErrorCode::EmptyDataset, "cannot build on an empty dataset");
  if (dataset->size() > std::numeric_limits<std::uint32_t>::max())
    fail(ErrorCode::BadParams, "at most 2^32-1 points are supported");
  if (dataset->dim() != bundle->dim()) fail(ErrorCode::DimensionMismatch, "bundle built for another dimension");
  MrHbeState s;
  s.bundle_ = std::move(bundle);
  s.dataset_ = std::move(dataset);
  s.seed_ = seed;
  if (!eager_tables || s.bundle_->config().fallback) return s;

  const auto& anchors = s.bundle_->anchors();
  const auto& opts = s.bundle_->options();
  const Dataset& ds = *s.dataset_;
  s.schemes_.reserve(anchors.size());
  s.tables_.reserve(anchors.size());
  std::vector<std::uint32_t> idx;
  for (std::size_t t = 0; t < anchors.size(); ++t) {
    s.schemes_.push_back(PoweredScheme::sample(anchors[t].spec, ds.dim(), derive_seed(seed, t, 0), opts.cap_budget,
                                               opts.materialize_budget));
    idx.clear();
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (s.admitted(t, i)) idx.push_back(static_cast<std::uint32_t>(i));
    }
    const auto width = static_cast<std::uint32_t>(2 * s.schemes_[t].k());
    s.tables_.push_back(HashTable::from_keys(width, s.schemes_[t].dataset_keys(ds, idx), idx));
  }
  return s;
}

MrHbeState MrHbeState::replica(std::uint64_t seed, bool eager_tables) const {
  if (!built()) fail(ErrorCode::NotBuilt, "estimator state is not built");
  MrHbeState s = build(bundle_, dataset_, seed, eager_tables);
  s.kernel_ = kernel_;
  return s;
}

const SchemeBundle& MrHbeState::bundle() const {
  if (!bundle_) fail(ErrorCode::NotBuilt, "estimator state is not built");
  return *bundle_;
}

const Dataset& MrHbeState::dataset() const {
  if (!dataset_) fail(ErrorCode::NotBuilt, "estimator state is not built");
  return *dataset_;
}

bool MrHbeState::admitted(std::size_t t, std::size_t i) const {
  const double lg = bundle_->anchors()[t].log_gate;
  if (lg == 0.0) return true;
  return uniform_at(derive_seed(seed_, t, 1), i) < std::exp(lg);
}

void MrHbeState::bucket(std::size_t t, std::span<const double> y, std::vector<std::uint32_t>& out) const {
  out.clear();
  if (has_tables()) {
    const auto hit = tables_[t].find(schemes_[t].query_key(y));
    out.assign(hit.begin(), hit.end());
    return;
  }
  const Dataset& ds = *dataset_;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (admitted(t, i)) out.push_back(static_cast<std::uint32_t>(i));
  }
  // Lazy banks: rows are generated only as far as the filter needs them.
  const PoweredScheme scheme =
      PoweredScheme::sample(bundle_->anchors()[t].spec, ds.dim(), derive_seed(seed_, t, 0), bundle_->options().cap_budget, 0);
  scheme.filter_bucket(ds, out, y);
}

// ---------------------------------------------------------------- queries

namespace {

// Shared by the scalar and vector estimators so both consume the RNG and
// round identically. emit(anchor, coefficient, point_index, rho); the
// coefficient is (p_t/W)·|H_t(y)|, or n for the uniform fallback.
template <class Emit>
void run_estimator(const MrHbeState& s, std::span<const double> y, Rng& rng, std::vector<AnchorTerm>* diag,
                   Emit&& emit) {
  const Dataset& ds = s.dataset();
  const SchemeBundle& b = s.bundle();
  const double n = static_cast<double>(ds.size());
  if (b.config().fallback) {
    const auto i = static_cast<std::size_t>(rng.below(ds.size()));
    emit(std::size_t{0}, n, i, inner(ds.row(i), y));
    return;
  }
  const std::size_t T = b.size();
  std::vector<std::uint32_t> bucket;
  std::vector<double> lps(T);
  if (diag) diag->assign(T, AnchorTerm{});
  for (std::size_t t = 0; t < T; ++t) {
    s.bucket(t, y, bucket);
    if (bucket.empty()) continue;
    const std::uint32_t i = bucket[rng.below(bucket.size())];
    const double rho = inner(ds.row(i), y);
    b.log_probs(rho, lps);
    double coef = 0.0;
    if (lps[t] != kNegInf) {
      // W = Σ p_{t'}² over anchors with p_{t'} above the floor, in log space.
      double top = kNegInf;
      for (double l : lps) top = std::max(top, 2.0 * l);
      double sum = 0.0;
      for (double l : lps) sum += (l == kNegInf) ? 0.0 : std::exp(2.0 * l - top);
      coef = std::exp(lps[t] - (top + std::log(sum))) * static_cast<double>(bucket.size());
    }
    if (diag) (*diag)[t] = AnchorTerm{bucket.size(), static_cast<std::int64_t>(i), coef / static_cast<double>(bucket.size()), 0.0};
    if (coef > 0.0) emit(t, coef, i, rho);
  }
}

EstimateSample draw_impl(const MrHbeState& s, std::span<const double> y, Rng& rng) {
  EstimateSample out;
  double total = 0.0;
  const SchemeBundle& b = s.bundle();
  std::vector<AnchorTerm>* diag = b.config().fallback ? nullptr : &out.per_anchor;
  run_estimator(s, y, rng, diag, [&](std::size_t t, double coef, std::size_t, double rho) {
    const double term = coef * b.weight(rho);
    total += term;
    if (diag) (*diag)[t].term = term;
  });
  out.value = total / static_cast<double>(s.dataset().size());
  return out;
}

}  // namespace

EstimateSample draw(const MrHbeState& state, std::span<const double> y, Rng& rng) {
  check_query(state, y);
  return draw_impl(state, y, rng);
}

EstimateSample draw_fresh(const MrHbeState& state, std::span<const double> y, Rng& rng) {
  check_query(state, y);
  return draw_impl(state.replica(rng.next_seed(), false), y, rng);
}

double draw_weighted(const MrHbeState& state, std::span<const double> y, const PointWeight& f, Rng& rng) {
  check_query(state, y);
  double total = 0.0;
  run_estimator(state, y, rng, nullptr,
                [&](std::size_t, double coef, std::size_t i, double rho) { total += coef * f(i, rho); });
  return total;
}

std::vector<double> draw_vector(const MrHbeState& state, std::span<const double> y, const VectorFn& g, Rng& rng,
                                bool fresh) {
  check_query(state, y);
  const MrHbeState own = fresh ? state.replica(rng.next_seed(), false) : MrHbeState{};
  const MrHbeState& s = fresh ? own : state;
  const SchemeBundle& b = s.bundle();
  const Dataset& ds = s.dataset();
  std::vector<double> acc;
  run_estimator(s, y, rng, nullptr, [&](std::size_t, double coef, std::size_t i, double rho) {
    const std::vector<double> v = g(ds.row(i), y);
    const double expect = b.weight(rho);
    if (std::abs(norm(v) - expect) > 1e-6 * expect) {
      fail(ErrorCode::NormMismatch, "vector map norm differs from the kernel weight");
    }
    if (acc.empty()) acc.assign(v.size(), 0.0);
    if (v.size() != acc.size()) fail(ErrorCode::DimensionMismatch, "vector map changed its output size");
    for (std::size_t j = 0; j < v.size(); ++j) acc[j] += coef * v[j];
  });
  if (acc.empty()) {
    // All buckets empty; the output size comes from one probe of g.
    acc.assign(g(ds.row(0), y).size(), 0.0);
  }
  for (double& a : acc) a /= static_cast<double>(ds.size());
  return acc;
}

RelvarBound relvar_bound(double beta, double log_m, double mu) {
  if (!(mu > 0.0 && mu <= 1.0)) fail(ErrorCode::BadParams, "mu must lie in (0,1]");
  if (!(log_m >= 0.0)) fail(ErrorCode::BadParams, "M must be >= 1");
  const double shape = std::pow(mu, -beta) + std::pow(mu, beta - 1.0);
  const double rel = 8.0 * std::exp(3.0 * log_m) * shape;
  return {mu * mu * rel + mu * mu, rel};
}

Moments empirical_moments(const MrHbeState& state, std::span<const double> y, std::size_t draws, Rng& rng,
                          bool fresh_tables) {
  if (draws < 100) fail(ErrorCode::BadParams, "empirical_moments needs at least 100 draws");
  Moments m;
  m.draws = draws;
  double mean = 0.0, m2 = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double v = (fresh_tables ? draw_fresh(state, y, rng) : draw(state, y, rng)).value;
    const double d = v - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (v - mean);
    sq += v * v;
  }
  m.mean = mean;
  m.second = sq / static_cast<double>(draws);
  m.relvar = mean > 0.0 ? m.second / (mean * mean) - 1.0 : std::numeric_limits<double>::infinity();
  m.stderr_ = std::sqrt(m2 / static_cast<double>(draws - 1) / static_cast<double>(draws));
  return m;
}

// ---------------------------------------------------------------- persistence

namespace {

constexpr char kStateMagic[4] = {'M', 'R', 'H', 'S'};
constexpr std::uint16_t kStateVersion = 1;

class Writer {
 public:
  template <class T>
  void put(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf.insert(buf.end(), b, b + sizeof(T));
  }
  void bytes(std::span<const unsigned char> s) {
    put<std::uint64_t>(s.size());
    buf.insert(buf.end(), s.begin(), s.end());
  }
  std::vector<unsigned char> buf;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> s) : in(s) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
  }
  std::span<const unsigned char> bytes() {
    const auto n = get<std::uint64_t>();
    need(n);
    auto s = in.subspan(at, n);
    at += n;
    return s;
  }
  void need(std::size_t n) const {
    if (in.size() - at < n) fail(ErrorCode::TruncatedFile, "estimator state file is truncated");
  }
  std::span<const unsigned char> in;
  std::size_t at = 0;
};

}  // namespace

void save_state(const MrHbeState& state, const std::filesystem::path& path) {
  if (!state.built()) fail(ErrorCode::NotBuilt, "estimator state is not built");
  if (!state.kernel_spec()) fail(ErrorCode::BadParams, "only states built from a kernel spec can be saved");
  const BuildOptions& o = state.bundle().options();
  Writer w;
  for (char c : kStateMagic) w.put(c);
  w.put(kStateVersion);
  const std::string spec = kernel_spec_json(*state.kernel_spec());
  w.bytes({reinterpret_cast<const unsigned char*>(spec.data()), spec.size()});
  w.put(o.beta);
  w.put(o.zeta);
  w.put(static_cast<std::uint8_t>(o.mode));
  w.put<std::uint64_t>(o.mc.grid);
  w.put<std::uint64_t>(o.mc.trials);
  w.put<std::uint64_t>(o.mc.seed);
  w.put<std::uint64_t>(o.cap_budget);
  w.put<std::uint64_t>(o.materialize_budget);
  w.put(state.seed());
  w.bytes(encode_dataset(state.dataset()));
  w.put<std::uint8_t>(state.has_tables() ? 1 : 0);
  if (state.has_tables()) {
    w.put<std::uint64_t>(state.tables().size());
    for (const HashTable& table : state.tables()) {
      w.put(table.width);
      w.put<std::uint64_t>(table.size());
      for (std::uint32_t k : table.keys) w.put(k);
      for (std::uint32_t i : table.points) w.put(i);
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
  if (!f) fail(ErrorCode::IoError, "write failed for " + path.string());
}

MrHbeState load_state(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open " + path.string());
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(buf);
  for (char c : kStateMagic) {
    if (r.get<char>() != c) fail(ErrorCode::BadMagic, path.string() + " is not an estimator state file");
  }
  if (r.get<std::uint16_t>() != kStateVersion) fail(ErrorCode::BadMagic, "unsupported state file version");
  const auto spec_bytes = r.bytes();
  const KernelSpec spec = parse_kernel_spec(std::string(spec_bytes.begin(), spec_bytes.end()));
  BuildOptions o;
  o.beta = r.get<double>();
  o.zeta = r.get<double>();
  o.mode = static_cast<WeightMode>(r.get<std::uint8_t>());
  o.mc.grid = r.get<std::uint64_t>();
  o.mc.trials = r.get<std::uint64_t>();
  o.mc.seed = r.get<std::uint64_t>();
  o.cap_budget = r.get<std::uint64_t>();
  o.materialize_budget = r.get<std::uint64_t>();
  const auto seed = r.get<std::uint64_t>();
  Dataset ds = decode_dataset(r.bytes());
  const bool tables = r.get<std::uint8_t>() != 0;
  o.eager_tables = false;

  MrHbeState s = MrHbeState::build(spec, std::move(ds), seed, o);
  if (!tables) return s;
  const auto count = r.get<std::uint64_t>();
  if (count != s.bundle().size()) fail(ErrorCode::BadMagic, "table count does not match the rebuilt bundle");
  for (std::size_t t = 0; t < count; ++t) {
    s.schemes_.push_back(PoweredScheme::sample(s.bundle().anchors()[t].spec, s.dataset().dim(), derive_seed(seed, t, 0),
                                               o.cap_budget, o.materialize_budget));
    const auto width = r.get<std::uint32_t>();
    if (width != 2 * s.schemes_.back().k()) fail(ErrorCode::BadMagic, "table key width does not match the bundle");
    const auto rows = r.get<std::uint64_t>();
    if (rows > s.dataset().size()) fail(ErrorCode::BadMagic, "table has more rows than points");
    r.need(rows * (width + 1) * sizeof(std::uint32_t));
    std::vector<std::uint32_t> keys(rows * width), points(rows);
    for (auto& k : keys) k = r.get<std::uint32_t>();
    for (auto& i : points) {
      i = r.get<std::uint32_t>();
      if (i >= s.dataset().size()) fail(ErrorCode::BadMagic, "table index out of range");
    }
    // Re-sorting is a no-op for files written by save_state.
    s.tables_.push_back(HashTable::from_keys(width, std::move(keys), std::move(points)));
  }
  return s;
}

}  // namespace mrhbe

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrhbe/convex_approx.hpp"
#include "mrhbe/core_data.hpp"
#include "mrhbe/kernels.hpp"
#include "mrhbe/rng.hpp"
#include "mrhbe/sphere_hash.hpp"

namespace mrhbe {

// Constants of the scale-free construction for a given φ and β.
struct ScaleFreeConfig {
  double beta = 0.5;
  double zeta = kDefaultZeta;
  double lipschitz = 0.0;  // L(φ)
  double range = 0.0;      // R(φ)
  double phi_max = 0.0;
  double delta_star = 0.0;  // 1/(2βL)
  double c_star = 0.0;      // C₁(δ*)
  unsigned k_star = 1;      // ⌈(2β²LR/ln C*)^{1/3}⌉
  double log_m_phi = 0.0;   // 2k*·ln C*
  bool fallback = false;    // βL/k* < 2: uniform sampling suffices

  double m_phi() const { return std::exp(log_m_phi); }
  double smoothed_lipschitz() const { return beta * lipschitz / k_star; }
};

ScaleFreeConfig scale_free_config(const ConvexPhi& phi, double beta, double zeta = kDefaultZeta);

// How the estimator evaluates p_t(ρ) inside its importance weights.
//   Exact  the collision probability of the sampled family (closed form)
//   Ideal  e^{k·h(ρ)}, the asymptotic form; not unbiased
//   Mc     Monte Carlo table on a ρ-grid, linear interpolation
enum class WeightMode { Exact, Ideal, Mc };

const char* to_string(WeightMode m);
WeightMode parse_weight_mode(const std::string& s);

struct McCalibration {
  std::size_t grid = 512;
  std::uint64_t trials = 100000;
  std::uint64_t seed = 0x6d6362;
};

struct BuildOptions {
  double beta = 0.5;
  double zeta = kDefaultZeta;
  WeightMode mode = WeightMode::Exact;
  McCalibration mc{};
  std::uint64_t cap_budget = kDefaultCapBudget;
  std::size_t materialize_budget = kDefaultMaterializeBudget;
  bool eager_tables = true;
};

struct AnchorScheme {
  LocalScheme local;  // anchor of the smoothed φ̃
  SchemeSpec spec;    // powered to k*
  double log_gate = 0.0;  // k*·φ̃(±1) for boundary anchors, 0 otherwise
  std::uint64_t m_plus = 0;   // caps per plus bank, 0 when dropped
  std::uint64_t m_minus = 0;
};

// Everything about the estimator that does not depend on the hash seed.
class SchemeBundle {
 public:
  static std::shared_ptr<const SchemeBundle> build(const ConvexPhi& phi, std::size_t dim, const BuildOptions& opts);

  const ScaleFreeConfig& config() const noexcept { return config_; }
  const ConvexPhi& phi() const noexcept { return phi_; }
  // φ̃ = β(φ − φ_max)/k* and its interpolation set at ε = 1/2; absent on fallback.
  const std::optional<InterpolationSet>& interpolation() const noexcept { return interp_; }
  const std::vector<AnchorScheme>& anchors() const noexcept { return anchors_; }
  std::size_t size() const noexcept { return anchors_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const BuildOptions& options() const noexcept { return opts_; }

  // ln p_t(ρ) including the gate, or −∞ below the 1e−300 floor.
  double log_prob(std::size_t t, double rho) const;
  void log_probs(double rho, std::span<double> out) const;
  // e^{φ(ρ) − φ_max}
  double weight(double rho) const { return std::exp(phi_.value(rho) - config_.phi_max); }

 private:
  SchemeBundle() = default;

  ScaleFreeConfig config_;
  ConvexPhi phi_ = builtin("gaussian");
  std::optional<InterpolationSet> interp_;
  std::vector<AnchorScheme> anchors_;
  std::vector<std::vector<double>> mc_table_;  // per anchor, p on a uniform ρ-grid
  std::size_t dim_ = 0;
  BuildOptions opts_;
};

inline constexpr double kLogProbFloor = -690.7755278982137;  // ln 1e−300

// Admitted points of one anchor sorted by key, so every bucket is a
// contiguous run. About 4·(2k+1) bytes per point.
struct HashTable {
  std::uint32_t width = 0;
  std::vector<std::uint32_t> keys;    // row-major, sorted lexicographically
  std::vector<std::uint32_t> points;  // point of each key row

  // keys has points.size() rows of the given width; sorts both.
  static HashTable from_keys(std::uint32_t width, std::vector<std::uint32_t> keys, std::vector<std::uint32_t> points);
  std::size_t size() const noexcept { return points.size(); }
  std::span<const std::uint32_t> key(std::size_t j) const noexcept {
    return {keys.data() + j * width, width};
  }
  std::span<const std::uint32_t> find(std::span<const std::uint32_t> key) const;
  std::size_t bucket_count() const;
  bool operator==(const HashTable&) const = default;
};

// One hash realisation of the estimator. Scheme t uses seed derive_seed(seed, t, 0)
// and gate uniforms derive_seed(seed, t, 1); tables are optional because buckets
// can be recomputed from the seed by filtering.
class MrHbeState {
 public:
  MrHbeState() = default;
  static MrHbeState build(const ConvexPhi& phi, Dataset dataset, std::uint64_t seed, const BuildOptions& opts = {});
  // As above, remembering the spec so the state can be saved.
  static MrHbeState build(const KernelSpec& kernel, Dataset dataset, std::uint64_t seed, const BuildOptions& opts = {});
  static MrHbeState build(std::shared_ptr<const SchemeBundle> bundle, std::shared_ptr<const Dataset> dataset,
                          std::uint64_t seed, bool eager_tables);
  // Same bundle and data under another seed.
  MrHbeState replica(std::uint64_t seed, bool eager_tables = false) const;

  bool built() const noexcept { return bundle_ != nullptr; }
  bool fallback() const noexcept { return built() && bundle_->config().fallback; }
  bool has_tables() const noexcept { return !tables_.empty(); }
  const SchemeBundle& bundle() const;
  std::shared_ptr<const SchemeBundle> bundle_ptr() const noexcept { return bundle_; }
  const Dataset& dataset() const;
  std::shared_ptr<const Dataset> dataset_ptr() const noexcept { return dataset_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<HashTable>& tables() const noexcept { return tables_; }
  const std::optional<KernelSpec>& kernel_spec() const noexcept { return kernel_; }

  // Gate of anchor t admits point i.
  bool admitted(std::size_t t, std::size_t i) const;
  // H_t(y): table lookup when tables exist, filtering otherwise.
  void bucket(std::size_t t, std::span<const double> y, std::vector<std::uint32_t>& out) const;

 private:
  friend MrHbeState load_state(const std::filesystem::path& path);

  std::shared_ptr<const SchemeBundle> bundle_;
  std::shared_ptr<const Dataset> dataset_;
  std::uint64_t seed_ = 0;
  std::vector<PoweredScheme> schemes_;  // only with tables
  std::vector<HashTable> tables_;
  std::optional<KernelSpec> kernel_;
};

struct AnchorTerm {
  std::size_t bucket_size = 0;
  std::int64_t index = -1;  // chosen point, −1 for an empty bucket
  double weight = 0.0;      // p_t/W at the chosen point
  double term = 0.0;
};

struct EstimateSample {
  double value = 0.0;
  std::vector<AnchorTerm> per_anchor;
};

// Expected table bytes of one replica over n points, gates included.
double estimated_table_bytes(const SchemeBundle& bundle, std::size_t n);

// Z(y) under the state's own hash realisation.
EstimateSample draw(const MrHbeState& state, std::span<const double> y, Rng& rng);
// Z(y) under a hash realisation drawn from rng (independent tables per call).
EstimateSample draw_fresh(const MrHbeState& state, std::span<const double> y, Rng& rng);

// Σ_t (p_t/W)·|H_t(y)|·f(i_t, ρ_t) over the sampled bucket elements, whose
// expectation is Σ_i f(i, ⟨x_i,y⟩) for any f. draw() is this with
// f = e^{φ(ρ) − φ_max}, divided by n.
using PointWeight = std::function<double(std::size_t index, double rho)>;
double draw_weighted(const MrHbeState& state, std::span<const double> y, const PointWeight& f, Rng& rng);

// g(x, y) with ‖g‖ = e^{φ(⟨x,y⟩) − φ_max}.
using VectorFn = std::function<std::vector<double>(std::span<const double> x, std::span<const double> y)>;

std::vector<double> draw_vector(const MrHbeState& state, std::span<const double> y, const VectorFn& g, Rng& rng,
                                bool fresh = false);

struct RelvarBound {
  double second_moment = 0.0;  // V_{β,M}(μ)
  double relvar = 0.0;         // V/μ² − 1
};
// V_{β,M}(μ) = 8M³μ²(μ^{−β} + μ^{−(1−β)}) + μ², with M = e^{log_m}.
RelvarBound relvar_bound(double beta, double log_m, double mu);

struct Moments {
  double mean = 0.0;
  double second = 0.0;
  double relvar = 0.0;
  double stderr_ = 0.0;
  std::size_t draws = 0;
};
Moments empirical_moments(const MrHbeState& state, std::span<const double> y, std::size_t draws, Rng& rng,
                          bool fresh_tables = true);

// Binary format "MRHS": kernel spec, options, seed, dataset and tables. Only
// states built from a KernelSpec (builtin or registered) can be saved.
void save_state(const MrHbeState& state, const std::filesystem::path& path);
MrHbeState load_state(const std::filesystem::path& path);

}  // namespace mrhbe

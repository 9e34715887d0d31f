// Microbenchmarks for the hot paths: hashing, table builds, single draws and
// the uniform baseline, on planted unit-sphere instances.

#include <benchmark/benchmark.h>

#include <cmath>
#include <map>

#include "mrhbe/adaptive.hpp"
#include "mrhbe/euclidean.hpp"
#include "mrhbe/mr_hbe.hpp"
#include "mrhbe/oracle_bench.hpp"
#include "mrhbe/sphere_hash.hpp"

namespace {

using namespace mrhbe;

const ConvexPhi& kernel() {
  static const ConvexPhi phi = builtin("gaussian", {.r2 = 2.0});
  return phi;
}

const PlantedInstance& instance(std::size_t n) {
  static std::map<std::size_t, PlantedInstance> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gen_planted(n, 8, 0.05, kernel(), 7)).first;
  return it->second;
}

void BM_DatasetKeys(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Dataset& ds = instance(n).dataset;
  const PoweredScheme s = PoweredScheme::sample(SchemeSpec::gamma_family(1.45, 1.09, kDefaultZeta, 1), 8, 3);
  std::vector<std::uint32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
  for (auto _ : state) benchmark::DoNotOptimize(s.dataset_keys(ds, idx));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_DatasetKeys)->Arg(1000)->Arg(4000);

void BM_ReplicaBuild(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto bundle = SchemeBundle::build(kernel(), 8, {});
  const auto data = std::make_shared<const Dataset>(instance(n).dataset);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(MrHbeState::build(bundle, data, ++seed, true));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_ReplicaBuild)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_Draw(benchmark::State& state) {
  const PlantedInstance& inst = instance(4000);
  const MrHbeState s = MrHbeState::build(kernel(), inst.dataset, 5);
  Rng rng(6);
  for (auto _ : state) benchmark::DoNotOptimize(draw(s, inst.query, rng).value);
}
BENCHMARK(BM_Draw);

void BM_UniformSample(benchmark::State& state) {
  const PlantedInstance& inst = instance(4000);
  const double top = kernel().phi_max();
  Rng rng(8);
  for (auto _ : state) {
    const auto i = static_cast<std::size_t>(rng.below(inst.dataset.size()));
    benchmark::DoNotOptimize(std::exp(kernel().value(inner(inst.dataset.row(i), inst.query)) - top));
  }
}
BENCHMARK(BM_UniformSample);

void BM_BruteForce(benchmark::State& state) {
  const PlantedInstance& inst = instance(4000);
  for (auto _ : state) benchmark::DoNotOptimize(brute_force_mu(kernel(), inst.dataset, inst.query));
}
BENCHMARK(BM_BruteForce);

void BM_AdaptiveQuery(benchmark::State& state) {
  const PlantedInstance& inst = instance(1000);
  MainOptions o;
  o.tau = 0.025;
  o.threads = 1;
  Rng rng(9);
  const MainStructure m = MainStructure::build(kernel(), inst.dataset, o, rng);
  std::size_t samples = 0;
  for (auto _ : state) samples += m.query(inst.query, rng).samples_used;
  state.counters["samples"] = benchmark::Counter(static_cast<double>(samples), benchmark::Counter::kAvgIterations);
}
BENCHMARK(BM_AdaptiveQuery)->Unit(benchmark::kMillisecond)->Iterations(20);

void BM_EuclideanDraw(benchmark::State& state) {
  Rng gen(10);
  std::vector<double> raw;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> x(8);
    for (double& v : x) v = gen.normal();
    const double s = (1.0 + gen.uniform()) / norm(x);
    for (double v : x) raw.push_back(v * s);
  }
  const EuclideanEstimator est = EuclideanEstimator::build(builtin("exp-inner", {.r2 = 1.0, .domain = 4.0}),
                                                           p0_pow_exp(0.0, "neg-half-square", 2.0),
                                                           Dataset(8, std::move(raw)), {}, 11);
  std::vector<double> y(8, 0.0);
  y[0] = 1.5;
  Rng rng(12);
  for (auto _ : state) benchmark::DoNotOptimize(draw_euclidean(est, y, rng));
}
BENCHMARK(BM_EuclideanDraw);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include <cmath>
#include <memory>

#include "latopt/cmaes.hpp"
#include "latopt/decoder.hpp"
#include "latopt/driver.hpp"
#include "latopt/fem.hpp"
#include "latopt/field_ops.hpp"
#include "latopt/problem.hpp"
#include "latopt/rng.hpp"

using namespace latopt;

namespace {

DensityField random_design(int nelx, int nely, std::uint64_t seed) {
  CounterRng rng(seed);
  DensityField x(nelx, nely);
  for (double& v : x.values) v = rng.uniform(0.05, 1.0);
  return x;
}

std::vector<double> random_latent(int n, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> z(static_cast<std::size_t>(n));
  for (double& v : z) v = rng.normal();
  return z;
}

}  // namespace

static void BM_FemCompliance(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const FemModel model(mbb_half_beam(n, n, 0.4));
  const auto x = random_design(n, n, 1);
  for (auto _ : state) benchmark::DoNotOptimize(model.solve(x).objective);
}
BENCHMARK(BM_FemCompliance)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_FemSensitivities(benchmark::State& state) {
  const FemModel model(mbb_half_beam(64, 64, 0.4));
  const auto x = random_design(64, 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(model.solve_with_sensitivities(x).gradient.data());
}
BENCHMARK(BM_FemSensitivities)->Unit(benchmark::kMillisecond);

static void BM_ThermalCompliance(benchmark::State& state) {
  const FemModel model(thermal_benchmark_problem(64));
  const auto x = random_design(64, 64, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.solve(x).objective);
}
BENCHMARK(BM_ThermalCompliance)->Unit(benchmark::kMillisecond);

static void BM_ConeFilter(benchmark::State& state) {
  const ConeFilter filter(64, 64, 2.0);
  const auto x = random_design(64, 64, 4);
  for (auto _ : state) benchmark::DoNotOptimize(filter.apply(x).values.data());
}
BENCHMARK(BM_ConeFilter)->Unit(benchmark::kMicrosecond);

static void BM_ConstrainedSigmoid(benchmark::State& state) {
  DensityField logits = random_design(64, 64, 5);
  for (double& v : logits.values) v = 8.0 * v - 4.0;
  for (auto _ : state) benchmark::DoNotOptimize(constrained_sigmoid(logits, 0.3).offset);
}
BENCHMARK(BM_ConstrainedSigmoid)->Unit(benchmark::kMicrosecond);

// Decodes per second are reported as items_per_second.
static void BM_DecodeLbae(benchmark::State& state) {
  const DecoderGraph g = reference_lbae_decoder(256, 0);
  const auto z = random_latent(256, 6);
  for (auto _ : state) benchmark::DoNotOptimize(decode(g, z).data());
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DecodeLbae)->Unit(benchmark::kMillisecond);

static void BM_DecodeVae(benchmark::State& state) {
  const DecoderGraph g = reference_vae_decoder(64, 0);
  const auto z = random_latent(64, 7);
  for (auto _ : state) benchmark::DoNotOptimize(decode(g, z).data());
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DecodeVae)->Unit(benchmark::kMillisecond);

static void BM_LatentEvaluation(benchmark::State& state) {
  RunConfig c;
  c.problem = generate_in_distribution(1, 0).problems.front();
  c.parameterization = Parameterization::latent(std::make_shared<const DecoderGraph>(reference_lbae_decoder(256, 0)));
  const CandidateEvaluator ev(c);
  const auto z = random_latent(256, 8);
  for (auto _ : state) benchmark::DoNotOptimize(ev.evaluate(z));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_LatentEvaluation)->Unit(benchmark::kMillisecond);

static void BM_CmaGeneration(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  OptimizerConfig cfg;
  CmaEs es(n, cfg);
  for (auto _ : state) {
    const auto xs = es.ask();
    std::vector<double> f;
    f.reserve(xs.size());
    for (const auto& x : xs) f.push_back(x.squaredNorm());
    es.tell(xs, f);
  }
}
BENCHMARK(BM_CmaGeneration)->Arg(64)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();

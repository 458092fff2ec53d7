#include <benchmark/benchmark.h>

#include "tlens/metrics.hpp"
#include "tlens/optimizer.hpp"
#include "tlens/rng.hpp"
#include "tlens/targets.hpp"

using namespace tlens;

namespace {

ComplexEnvelope random_envelope(const SignalGrid& grid, std::uint64_t seed) {
  Philox4x32 rng(seed, "bench");
  ComplexEnvelope env(grid);
  for (cplx& v : env.samples) v = cplx(rng.next_normal(), rng.next_normal());
  return env;
}

void UnitaryTransform(benchmark::State& state) {
  const SignalGrid grid(static_cast<std::size_t>(state.range(0)), 160e9);
  const ComplexEnvelope env = random_envelope(grid, 1);
  for (auto _ : state) {
    ComplexEnvelope spec = to_spectrum(env);
    benchmark::DoNotOptimize(spec.samples.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(UnitaryTransform)->RangeMultiplier(4)->Range(1 << 10, 1 << 16)->Complexity();

void StagePropagation(benchmark::State& state) {
  const SignalGrid grid(static_cast<std::size_t>(state.range(0)), 160e9);
  CascadeDesign design = CascadeDesign::uniform(grid, 1, SpectralFilter::quadratic(-1321.0));
  Philox4x32 rng(2, "mask");
  for (double& v : design.stages[0].mask.phase) v = rng.next_uniform53();
  const ComplexEnvelope env = random_envelope(grid, 3);
  for (auto _ : state) {
    PropagationResult out = propagate_forward(env, design);
    benchmark::DoNotOptimize(out.field.samples.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(StagePropagation)->RangeMultiplier(4)->Range(1 << 10, 1 << 16)->Complexity();

void OptimizerSweep(benchmark::State& state) {
  const SignalGrid grid(4096, 160e9);
  ModulationSpec mod;
  mod.format = ModulationFormat::qpsk;
  mod.baud_rate = 20e9;
  mod.num_symbols = 512;
  mod.data_seed = 5;
  const TargetWaveform target = synthesize_target(mod, grid, 0.0);
  const ComplexEnvelope input = cw_input(grid);
  OptimizerConfig cfg;
  cfg.max_iterations = static_cast<int>(state.range(0));
  cfg.convergence_tolerance = 1e-30;  // run every sweep
  for (auto _ : state) {
    CascadeDesign design = CascadeDesign::uniform(grid, 4, SpectralFilter::quadratic(-1321.0));
    auto [d, report] = optimize_single(input, target.envelope, std::move(design), cfg);
    benchmark::DoNotOptimize(report.objective_history.data());
  }
}
BENCHMARK(OptimizerSweep)->Arg(1)->Arg(8);

void CorrelationMetric(benchmark::State& state) {
  const SignalGrid grid(static_cast<std::size_t>(state.range(0)), 160e9);
  const ComplexEnvelope a = random_envelope(grid, 11);
  const ComplexEnvelope b = random_envelope(grid, 12);
  for (auto _ : state) {
    benchmark::DoNotOptimize(waveform_correlation(a, b).correlation);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(CorrelationMetric)->RangeMultiplier(4)->Range(1 << 10, 1 << 16)->Complexity();

}  // namespace

BENCHMARK_MAIN();

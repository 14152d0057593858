// Serial pair-traversal reference vs. the OpenMP row kernel for the
// alignment force, plus one full Ito step for scale.

#include <benchmark/benchmark.h>

#include <vector>

#include "csflock/dynamics.hpp"
#include "csflock/initial_law.hpp"
#include "csflock/kernel.hpp"

namespace {

csflock::Ensemble make_ensemble(std::size_t n) {
  auto law = csflock::InitialLaw::gaussian({0.0, 0.0, 1.0, -0.5}, {1.0, 1.0, 0.5, 0.5});
  return csflock::sample_ensemble(law, n, 7);
}

void BM_ForceSerial(benchmark::State& state) {
  const auto ens = make_ensemble(static_cast<std::size_t>(state.range(0)));
  const auto kernel = csflock::CommunicationKernel::rational(1.0, 1.0);
  std::vector<double> out(ens.size() * ens.dim());
  for (auto _ : state) {
    csflock::alignment_force_all_serial(ens, kernel, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetComplexityN(state.range(0));
}

void BM_ForceParallel(benchmark::State& state) {
  const auto ens = make_ensemble(static_cast<std::size_t>(state.range(0)));
  const auto kernel = csflock::CommunicationKernel::rational(1.0, 1.0);
  std::vector<double> out(ens.size() * ens.dim());
  for (auto _ : state) {
    csflock::alignment_force_all(ens, kernel, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetComplexityN(state.range(0));
}

void BM_ItoStep(benchmark::State& state) {
  auto ens = make_ensemble(static_cast<std::size_t>(state.range(0)));
  const auto kernel = csflock::CommunicationKernel::rational(1.0, 1.0);
  csflock::Stepper stepper(kernel, 0.1, csflock::Scheme::ito_euler);
  for (auto _ : state) {
    stepper.advance(ens, 1e-4, 1e-2);
    benchmark::DoNotOptimize(ens.v().data());
  }
}

}  // namespace

BENCHMARK(BM_ForceSerial)->RangeMultiplier(2)->Range(64, 1024)->Complexity(benchmark::oNSquared);
BENCHMARK(BM_ForceParallel)->RangeMultiplier(2)->Range(64, 1024)->Complexity(benchmark::oNSquared);
BENCHMARK(BM_ItoStep)->Arg(128)->Arg(512);

BENCHMARK_MAIN();

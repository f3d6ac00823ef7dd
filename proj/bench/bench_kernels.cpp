#include <benchmark/benchmark.h>

#include <random>

#include "hermite_flow/kernels.hpp"
#include "hermite_flow/reference.hpp"

namespace {

using namespace hermite_flow;

struct Setup {
  TeacherModel teacher;
  Matrix V;
  Activation act = Activation::pure(4);
};

Setup make_setup(int d, int P, int m) {
  std::mt19937_64 eng(42);
  std::normal_distribution<double> g;
  Matrix V(m, d);
  for (int k = 0; k < m; ++k)
    for (int j = 0; j < d; ++j) V(k, j) = 0.1 * g(eng);
  return {TeacherModel::power_law(P, 0.8, d), std::move(V)};
}

void BM_PopulationTerms(benchmark::State& state) {
  const Setup s = make_setup(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                             static_cast<int>(state.range(2)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::population_terms(s.teacher, s.V, s.act));
}

void BM_PopulationTermsReference(benchmark::State& state) {
  const Setup s = make_setup(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                             static_cast<int>(state.range(2)));
  for (auto _ : state)
    benchmark::DoNotOptimize(reference::population_terms(s.teacher, s.V, s.act));
}

void BM_McLoss(benchmark::State& state) {
  const Setup s = make_setup(16, 4, 8);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::mc_loss(s.teacher, s.V, s.act, state.range(0), 1));
}

void BM_McLossReference(benchmark::State& state) {
  const Setup s = make_setup(16, 4, 8);
  for (auto _ : state)
    benchmark::DoNotOptimize(reference::mc_loss(s.teacher, s.V, s.act, state.range(0), 1));
}

void BM_SampleGrad(benchmark::State& state) {
  const Setup s = make_setup(static_cast<int>(state.range(0)), 8, static_cast<int>(state.range(1)));
  std::vector<double> x(s.V.cols(), 0.3);
  Matrix g;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::sample_grad_into(x, s.teacher, s.V, s.act, g));
}

}  // namespace

BENCHMARK(BM_PopulationTerms)->Args({128, 2, 6})->Args({512, 8, 24})->Args({512, 256, 600});
BENCHMARK(BM_PopulationTermsReference)->Args({128, 2, 6})->Args({512, 8, 24})->Args({512, 256, 600});
BENCHMARK(BM_McLoss)->Arg(100000);
BENCHMARK(BM_McLossReference)->Arg(100000);
BENCHMARK(BM_SampleGrad)->Args({128, 6})->Args({512, 24});
BENCHMARK_MAIN();

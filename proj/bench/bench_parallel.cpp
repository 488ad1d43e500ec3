// Serial reference against the OpenMP kernels for the three hot loops.
#include <benchmark/benchmark.h>

#include "afcp/approx.hpp"
#include "afcp/conformal.hpp"
#include "afcp/data.hpp"
#include "afcp/kernels.hpp"

using namespace afcp;

namespace {

ConformalSetup make_setup(Index n) {
  const QuerySplit qs = split_query(friedman1(n + 1, 1.0, 7), n);
  return ConformalSetup{qs.train, qs.x_query, 0.5, LossSpec::logcosh(),
                        KernelSpec{KernelFamily::laplacian, std::nullopt}, {}};
}

template <bool Parallel>
void BM_gram(benchmark::State& state) {
  const auto s = make_setup(state.range(0));
  const PointMatrix pts = s.augmented_points();
  const KernelSpec spec{KernelFamily::laplacian, 1.0};
  for (auto _ : state) benchmark::DoNotOptimize(Parallel ? gram(spec, pts) : gram_serial(spec, pts));
}

template <bool Parallel>
void BM_approx_curves(benchmark::State& state) {
  const auto s = make_setup(state.range(0));
  const ApproxContext ctx(s, ApproxMethod{ApproxKind::influence_function, 0.0});
  const YGrid grid = YGrid::around(s.data.Y, 0.5, state.range(1));
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? approx_pvalue_curves(ctx, grid) : approx_pvalue_curves_serial(ctx, grid));
}

template <bool Parallel>
void BM_bruteforce(benchmark::State& state) {
  const auto s = make_setup(state.range(0));
  const YGrid grid = YGrid::around(s.data.Y, 0.5, state.range(1));
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? full_pvalue_curve_bruteforce(s, grid)
                                      : full_pvalue_curve_bruteforce_serial(s, grid));
}

}  // namespace

BENCHMARK(BM_gram<false>)->Name("gram/serial")->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gram<true>)->Name("gram/openmp")->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_approx_curves<false>)->Name("approx_curves/serial")->Args({256, 2048})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_approx_curves<true>)
    ->Name("approx_curves/openmp")
    ->Args({256, 2048})
    ->Unit(benchmark::kMillisecond)
    ->UseRealTime();
BENCHMARK(BM_bruteforce<false>)->Name("bruteforce/serial")->Args({64, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_bruteforce<true>)->Name("bruteforce/openmp")->Args({64, 128})->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();

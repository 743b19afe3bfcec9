#include <vector>

#include <benchmark/benchmark.h>

#include "agd/adapters.hpp"
#include "agd/kernels.hpp"
#include "agd/rng.hpp"

using namespace agd;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

template <auto Kernel>
void BM_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 64, n = 64;
  const auto a = random_vector(m * k, 1), b = random_vector(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m * k * n));
}

template <auto Kernel>
void BM_pairwise(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(2 * n, 3), b = random_vector(2 * n, 4);
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(a, b, 2));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

template <auto Kernel>
void BM_kth_neighbor(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto p = random_vector(2 * n, 5);
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(p, 2, 5));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

// One guided forward pass against one CFG teacher step on the default model.
void BM_guided_vs_cfg(benchmark::State& state) {
  const diffusion::Denoiser base(diffusion::DenoiserConfig{}, 0);
  const adapters::AdapterStack stack(adapters::AdapterConfig{}, base);
  const adapters::GuidedModel guided(base, stack);
  const diffusion::CfgModel teacher(base);
  const std::size_t rows = 256;
  nn::Matrix x(rows, 2);
  const auto v = random_vector(2 * rows, 6);
  std::copy(v.begin(), v.end(), x.data().begin());
  const std::vector<double> sigma(rows, 1.0), omega(rows, 4.0);
  const std::vector<int> cls(rows, 1);
  for (auto _ : state) {
    if (state.range(0) == 0) {
      benchmark::DoNotOptimize(guided.predict(x, sigma, cls, omega));
    } else {
      benchmark::DoNotOptimize(teacher.predict(x, sigma, cls, omega));
    }
  }
  state.SetLabel(state.range(0) == 0 ? "agd" : "cfg_teacher");
}

}  // namespace

BENCHMARK_TEMPLATE(BM_gemm, kernels::gemm)->Arg(256)->Arg(4096);
BENCHMARK_TEMPLATE(BM_gemm, kernels::gemm_serial)->Arg(256)->Arg(4096);
BENCHMARK_TEMPLATE(BM_pairwise, kernels::pairwise_distance_sum)->Arg(2048);
BENCHMARK_TEMPLATE(BM_pairwise, kernels::pairwise_distance_sum_serial)->Arg(2048);
BENCHMARK_TEMPLATE(BM_kth_neighbor, kernels::kth_neighbor_distance)->Arg(2048);
BENCHMARK_TEMPLATE(BM_kth_neighbor, kernels::kth_neighbor_distance_serial)->Arg(2048);
BENCHMARK(BM_guided_vs_cfg)->Arg(0)->Arg(1);

BENCHMARK_MAIN();

// Microbenchmarks for the matrix kernels: serial reference vs the OpenMP
// variants, at shapes representative of the forward pass (seq x dim times
// dim x dim) and of the output projection (seq x dim times dim x vocab).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "ctxbias/kernels.hpp"

namespace {

std::vector<float> random_matrix(int64_t rows, int64_t cols, uint32_t seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> m(static_cast<size_t>(rows * cols));
  for (float& x : m) x = dist(gen);
  return m;
}

template <void (*Kernel)(const float*, const float*, float*, int64_t, int64_t, int64_t)>
void bench_matmul(benchmark::State& state) {
  const int64_t m = state.range(0), k = state.range(1), n = state.range(2);
  const std::vector<float> a = random_matrix(m, k, 1);
  const std::vector<float> b = random_matrix(k, n, 2);
  std::vector<float> c(static_cast<size_t>(m * n));
  for (auto _ : state) {
    Kernel(a.data(), b.data(), c.data(), m, k, n);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * m * k * n);
}

// C(k x n) = A(m x k)^T B(m x n): the gradient-accumulation shape.
template <void (*Kernel)(const float*, const float*, float*, int64_t, int64_t, int64_t)>
void bench_matmul_tn(benchmark::State& state) {
  const int64_t m = state.range(0), k = state.range(1), n = state.range(2);
  const std::vector<float> a = random_matrix(m, k, 1);
  const std::vector<float> b = random_matrix(m, n, 2);
  std::vector<float> c(static_cast<size_t>(k * n));
  for (auto _ : state) {
    Kernel(a.data(), b.data(), c.data(), m, k, n);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * m * k * n);
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({32, 64, 64})     // attention projection, short sequence
      ->Args({96, 64, 64})  // attention projection, full sequence
      ->Args({96, 64, 256}) // feed-forward expansion
      ->Args({96, 64, 64 * 8});  // output head over a medium vocab
}

}  // namespace

BENCHMARK(bench_matmul<ctxbias::kernels::matmul_serial<float>>)->Apply(shapes);
BENCHMARK(bench_matmul<ctxbias::kernels::matmul_omp<float>>)->Apply(shapes);
BENCHMARK(bench_matmul<ctxbias::kernels::matmul_nt_serial<float>>)->Apply(shapes);
BENCHMARK(bench_matmul<ctxbias::kernels::matmul_nt_omp<float>>)->Apply(shapes);
BENCHMARK(bench_matmul_tn<ctxbias::kernels::matmul_tn_serial<float>>)->Apply(shapes);
BENCHMARK(bench_matmul_tn<ctxbias::kernels::matmul_tn_omp<float>>)->Apply(shapes);

BENCHMARK_MAIN();

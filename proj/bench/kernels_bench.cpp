// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "handteleop/nn/kernels.hpp"

namespace nn = handteleop::nn;

namespace {

std::vector<float> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <bool kParallel>
void BM_Gemm(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  const int k = static_cast<int>(state.range(2));
  const auto a = random_vector(static_cast<std::size_t>(m) * k, 1);
  const auto b = random_vector(static_cast<std::size_t>(k) * n, 2);
  std::vector<float> c(static_cast<std::size_t>(m) * n);
  for (auto _ : state) {
    if constexpr (kParallel) {
      nn::kernels::parallel::gemm<float>(nn::Trans::kNo, nn::Trans::kNo, m, n, k, 1.0f, a, k, b, n, 0.0f, c, n);
    } else {
      nn::kernels::reference::gemm<float>(nn::Trans::kNo, nn::Trans::kNo, m, n, k, 1.0f, a, k, b, n, 0.0f, c, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * m * n * k, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

template <bool kParallel>
void BM_Im2col(benchmark::State& state) {
  nn::ConvGeometry g{static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                     static_cast<int>(state.range(1)), 4, 2, 1};
  const auto image = random_vector(static_cast<std::size_t>(g.channels) * g.height * g.width, 3);
  std::vector<float> col(g.col_rows() * g.col_cols());
  for (auto _ : state) {
    if constexpr (kParallel) {
      nn::kernels::parallel::im2col<float>(g, image, col);
    } else {
      nn::kernels::reference::im2col<float>(g, image, col);
    }
    benchmark::DoNotOptimize(col.data());
  }
}

}  // namespace

// Shapes taken from the compact and full encoder/decoder layers.
BENCHMARK(BM_Gemm<true>)->Args({32, 576, 256})->Args({128, 36, 1024})->Args({512, 576, 128})->Args({256, 1024, 512});
BENCHMARK(BM_Gemm<false>)->Args({32, 576, 256})->Args({128, 36, 1024})->Args({512, 576, 128});
BENCHMARK(BM_Gemm<true>)->Name("BM_GemmSkinny")->Args({1, 8192, 2304});
BENCHMARK(BM_Im2col<true>)->Args({16, 48})->Args({64, 12});
BENCHMARK(BM_Im2col<false>)->Args({16, 48})->Args({64, 12});

BENCHMARK_MAIN();

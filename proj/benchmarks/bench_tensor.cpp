// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the dense-math kernels that dominate training time.

#include <benchmark/benchmark.h>

#include "laminar/rng.hpp"
#include "laminar/tensor.hpp"

namespace {

laminar::Tensor random_matrix(std::int64_t rows, std::int64_t cols, std::uint64_t seed) {
  laminar::Rng rng(seed);
  laminar::Tensor t({rows, cols});
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const laminar::Tensor a = random_matrix(n, n, 1);
  const laminar::Tensor b = random_matrix(n, n, 2);
  for (auto _ : state) {
    laminar::Tensor c = laminar::matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulTransposeA(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const laminar::Tensor a = random_matrix(n, n, 3);
  const laminar::Tensor b = random_matrix(n, n, 4);
  for (auto _ : state) {
    laminar::Tensor c = laminar::matmul_transpose_a(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n * n * n);
}
BENCHMARK(BM_MatmulTransposeA)->Arg(64)->Arg(128);

void BM_MatmulTransposeB(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const laminar::Tensor a = random_matrix(n, n, 5);
  const laminar::Tensor b = random_matrix(n, n, 6);
  for (auto _ : state) {
    laminar::Tensor c = laminar::matmul_transpose_b(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n * n * n);
}
BENCHMARK(BM_MatmulTransposeB)->Arg(64)->Arg(128);

void BM_SoftmaxXent(benchmark::State& state) {
  const std::int64_t rows = state.range(0);
  const std::int64_t classes = 10;
  const laminar::Tensor logits = random_matrix(rows, classes, 7);
  std::vector<std::int64_t> labels(static_cast<std::size_t>(rows));
  laminar::Rng rng(8);
  for (auto& l : labels) l = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(classes)));
  for (auto _ : state) {
    auto res = laminar::softmax_xent(logits, labels);
    benchmark::DoNotOptimize(res.loss);
    benchmark::DoNotOptimize(res.grad_logits.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * rows);
}
BENCHMARK(BM_SoftmaxXent)->Arg(32)->Arg(256)->Arg(2048);

void BM_ReluForward(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const laminar::Tensor x = random_matrix(n, n, 9);
  for (auto _ : state) {
    laminar::Tensor y = laminar::relu(x);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n * n);
}
BENCHMARK(BM_ReluForward)->Arg(256);

}  // namespace

BENCHMARK_MAIN();

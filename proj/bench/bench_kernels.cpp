// Serial reference vs OpenMP kernels on layer shapes from the toy net and a
// mid-sized ResNet stage.

#include <benchmark/benchmark.h>

#include <random>

#include "aacv/kernels.hpp"

namespace {

using aacv::Shape;
using aacv::Tensor;

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// args: batch, size, channels
template <Tensor<float> (*Conv)(const Tensor<float>&, const Tensor<float>&, std::size_t)>
void BM_Conv3x3(benchmark::State& state) {
  const auto b = std::size_t(state.range(0)), s = std::size_t(state.range(1)), c = std::size_t(state.range(2));
  auto x = random_tensor({b, s, s, c}, 1);
  auto w = random_tensor({3, 3, c, c}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Conv(x, w, 1));
  state.SetItemsProcessed(std::int64_t(state.iterations() * b * s * s * 9 * c * c));
}

template <Tensor<float> (*GradW)(const Tensor<float>&, const Tensor<float>&, const Shape&, std::size_t)>
void BM_Conv3x3GradWeight(benchmark::State& state) {
  const auto b = std::size_t(state.range(0)), s = std::size_t(state.range(1)), c = std::size_t(state.range(2));
  auto x = random_tensor({b, s, s, c}, 1);
  auto dy = random_tensor({b, s, s, c}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(GradW(x, dy, Shape{3, 3, c, c}, 1));
  state.SetItemsProcessed(std::int64_t(state.iterations() * b * s * s * 9 * c * c));
}

// Attention logits: (B*heads, HW, d) x (B*heads, HW, d)^T. args: batch*heads, HW, d
template <Tensor<float> (*Mm)(const Tensor<float>&, const Tensor<float>&, bool, bool)>
void BM_AttentionLogits(benchmark::State& state) {
  const auto n = std::size_t(state.range(0)), hw = std::size_t(state.range(1)), d = std::size_t(state.range(2));
  auto q = random_tensor({n, hw, d}, 1);
  auto k = random_tensor({n, hw, d}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Mm(q, k, false, true));
  state.SetItemsProcessed(std::int64_t(state.iterations() * n * hw * hw * d));
}

}  // namespace

BENCHMARK(BM_Conv3x3<aacv::serial::conv2d<float>>)->Name("conv3x3/serial")->Args({32, 16, 16})->Args({8, 14, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3<aacv::parallel::conv2d<float>>)->Name("conv3x3/parallel")->Args({32, 16, 16})->Args({8, 14, 64})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Conv3x3GradWeight<aacv::serial::conv2d_grad_weight<float>>)->Name("conv3x3_grad_weight/serial")->Args({32, 16, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3GradWeight<aacv::parallel::conv2d_grad_weight<float>>)->Name("conv3x3_grad_weight/parallel")->Args({32, 16, 16})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_AttentionLogits<aacv::serial::batched_matmul<float>>)->Name("attention_logits/serial")->Args({128, 64, 4})->Args({8, 196, 40})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AttentionLogits<aacv::parallel::batched_matmul<float>>)->Name("attention_logits/parallel")->Args({128, 64, 4})->Args({8, 196, 40})->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();

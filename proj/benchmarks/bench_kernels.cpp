#include <benchmark/benchmark.h>

#include "metareg/autodiff.hpp"
#include "metareg/losses.hpp"
#include "metareg/rng.hpp"

using namespace metareg;

namespace {

Tensor<float> noise(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(shape);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// args: grid edge, input channels, output channels
void BM_Conv3dForward(benchmark::State& state) {
  const auto n = state.range(0), cin = state.range(1), cout = state.range(2);
  const auto in = noise({1, cin, n, n, n}, 1), k = noise({cout, cin, 3, 3, 3}, 2);
  for (auto _ : state) {
    Tape<float> tape;
    benchmark::DoNotOptimize(
        conv3d(tape.constant(in), tape.constant(k), std::optional<Var<float>>{}, 1, Padding::kSame).value().raw());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n * cin * cout * 27);
}
BENCHMARK(BM_Conv3dForward)->Args({32, 2, 8})->Args({32, 8, 8})->Args({16, 16, 16})->Args({8, 32, 32})
    ->Unit(benchmark::kMillisecond);

void BM_Conv3dForwardBackward(benchmark::State& state) {
  const auto n = state.range(0), cin = state.range(1), cout = state.range(2);
  const auto in = noise({1, cin, n, n, n}, 1), k = noise({cout, cin, 3, 3, 3}, 2);
  for (auto _ : state) {
    Tape<float> tape;
    auto x = tape.leaf(in, true, "x");
    auto w = tape.leaf(k, true, "w");
    auto loss = sum(conv3d(x, w, std::optional<Var<float>>{}, 1, Padding::kSame));
    benchmark::DoNotOptimize(tape.backward(loss).size());
  }
}
BENCHMARK(BM_Conv3dForwardBackward)->Args({32, 8, 8})->Args({16, 16, 16})->Unit(benchmark::kMillisecond);

void BM_Warp(benchmark::State& state) {
  const auto n = state.range(0);
  const auto vol = noise({1, n, n, n}, 3), ddf = noise({3, n, n, n}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::warp(vol, ddf, 1.0).raw());
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Warp)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_GaussianFilter(benchmark::State& state) {
  const auto vol = noise({1, 32, 32, 32}, 5);
  const double sigma = static_cast<double>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::gaussian_filter(vol, sigma, 1.0).raw());
}
BENCHMARK(BM_GaussianFilter)->Arg(1)->Arg(4)->Unit(benchmark::kMicrosecond);

void BM_MultiscaleLossWithGradient(benchmark::State& state) {
  auto p = noise({1, 32, 32, 32}, 6), q = noise({1, 32, 32, 32}, 7);
  for (float& v : p.data()) v = 0.5f + 0.5f * v;
  for (float& v : q.data()) v = v > 0.0f ? 1.0f : 0.0f;
  const LossWeights w;
  for (auto _ : state) {
    Tape<float> tape;
    auto x = tape.leaf(p, true, "p");
    benchmark::DoNotOptimize(tape.backward(multiscale_dice_loss(x, tape.constant(q), w, 1.0)).size());
  }
}
BENCHMARK(BM_MultiscaleLossWithGradient)->Unit(benchmark::kMillisecond);

}  // namespace

#include <benchmark/benchmark.h>

#include "metareg/metalearn.hpp"
#include "metareg/phantom.hpp"
#include "metareg/rng.hpp"

using namespace metareg;

namespace {

const Task& sample_task() {
  static const Task task = generate_case(PhantomConfig{}, 11, "bench");
  return task;
}

void BM_GenerateCase(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_case(PhantomConfig{}, seed++, "bench").case_id);
}
BENCHMARK(BM_GenerateCase)->Unit(benchmark::kMillisecond);

void BM_Augment(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(random_affine_augment(sample_task(), seed++, AugmentConfig{}).gt_valid);
}
BENCHMARK(BM_Augment)->Unit(benchmark::kMillisecond);

void BM_Inference(benchmark::State& state) {
  ArchConfig arch;
  arch.zero_init_heads = false;
  const NetworkParams params = init_params(arch, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(params, sample_task().source_image, sample_task().target_image).data.raw());
  }
}
BENCHMARK(BM_Inference)->Unit(benchmark::kMillisecond);

// One task-level gradient on a minibatch of range(0) interactions.
void BM_MinibatchGradient(benchmark::State& state) {
  ArchConfig arch;
  arch.zero_init_heads = false;
  const NetworkParams params = init_params(arch, 1);
  const TrainConfig config;
  std::vector<Interaction> batch;
  for (int b = 0; b < state.range(0); ++b) batch.push_back(sample_interaction(sample_task(), config, derive_seed(5, "b", b)));
  for (auto _ : state) benchmark::DoNotOptimize(minibatch_gradient(params, batch, config.loss).loss);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MinibatchGradient)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_Episode(benchmark::State& state) {
  TrainConfig config;
  config.k = static_cast<int>(state.range(0));
  const NetworkParams params = init_params(ArchConfig{}, 1);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(run_episode(params, sample_task(), config, seed++).losses.size());
}
BENCHMARK(BM_Episode)->Arg(2)->Unit(benchmark::kMillisecond);

}  // namespace

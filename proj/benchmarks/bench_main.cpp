#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "gasnext/losses.hpp"
#include "gasnext/metrics.hpp"
#include "gasnext/trainer.hpp"

using namespace gasnext;

namespace {

ModelConfig bench_model(int64_t resolution) {
  ModelConfig c;
  c.generator.resolution = resolution;
  c.generator.base_width = 16;
  c.generator.style_vector_dim = 64;
  c.generator.m_default = 4;
  c.discriminator.resolution = resolution;
  c.discriminator.patch_size = resolution / 4;
  c.discriminator.base_width = 16;
  c.train.batch_size = 8;
  return c;
}

StepBatch bench_batch(const ModelConfig& c) {
  const int64_t b = c.train.batch_size, r = c.generator.resolution, m = c.generator.m_default;
  StepBatch batch;
  batch.content = torch::rand({b, 1, r, r}) * 2 - 1;
  batch.styles = torch::rand({b, m, 1, r, r}) * 2 - 1;
  batch.target = torch::rand({b, 1, r, r}) * 2 - 1;
  batch.target_gray = batch.target;
  batch.paired = torch::ones({b});
  batch.cx_target = batch.cx_target_gray = batch.target;
  batch.real = batch.real_gray = batch.target;
  return batch;
}

}  // namespace

static void BM_CxSimilarity(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto x = torch::randn({4, n, 64});
  auto y = torch::randn({4, n, 64});
  CxConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(cx_similarity(x, y, cfg));
}
BENCHMARK(BM_CxSimilarity)->RangeMultiplier(4)->Range(16, 1024)->Unit(benchmark::kMicrosecond);

static void BM_Ssim(benchmark::State& state) {
  const int64_t r = state.range(0);
  std::vector<double> x(static_cast<size_t>(r * r)), y(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<double>(i % 17) / 16.0;
    y[i] = static_cast<double>(i % 13) / 12.0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(ssim(x, y, r, r, {}));
}
BENCHMARK(BM_Ssim)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

static void BM_GeneratorForward(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  auto c = bench_model(state.range(0));
  Generator g(c.generator);
  auto batch = bench_batch(c);
  for (auto _ : state) benchmark::DoNotOptimize(g->forward(batch.content, batch.styles));
}
BENCHMARK(BM_GeneratorForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  auto c = bench_model(state.range(0));
  Trainer trainer(c);
  auto batch = bench_batch(c);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(batch));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();

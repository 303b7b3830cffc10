#include <benchmark/benchmark.h>

#include <vector>

#include "cmro/layers.hpp"
#include "cmro/model.hpp"
#include "cmro/orientation.hpp"
#include "cmro/phantom.hpp"
#include "cmro/preprocess.hpp"
#include "cmro/random.hpp"

using namespace cmro;

namespace {

Tensor random_batch(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, 3, 64, 64});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

void BM_Predict(benchmark::State& state) {
  const auto params = ModelParams<float>::initialize(Architecture{}, 1);
  const auto batch = random_batch(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(model_predict(params, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Predict)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  auto params = ModelParams<float>::initialize(Architecture{}, 1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto batch = random_batch(n, 3);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 8);
  SgdState<float> sgd;
  for (auto _ : state) {
    ForwardCache<float> cache;
    const auto logits = model_forward(params, batch, Mode::train, {}, &cache);
    const auto loss = softmax_cross_entropy(logits, std::span<const int>(labels));
    sgd_step(params, model_backward(params, cache, loss.grad), sgd, 1e-3, 0.9);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Assemble(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto slice = generate_phantoms(1, {side, side, 1}, 4)[0].slice(0);
  const PreprocConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(assemble(slice, cfg));
}
BENCHMARK(BM_Assemble)->Arg(96)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_ApplyVolume(benchmark::State& state) {
  const auto vol = generate_phantoms(1, {256, 256, 12}, 5)[0];
  const auto o = Orientation::from_code(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(apply_volume(o, vol));
}
BENCHMARK(BM_ApplyVolume)->DenseRange(0, 7)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();

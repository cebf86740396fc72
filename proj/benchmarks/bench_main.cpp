#include <benchmark/benchmark.h>

#include "bl/encoders.hpp"
#include "bl/fusion.hpp"
#include "bl/ops.hpp"
#include "bl/rng.hpp"
#include "bl/trainer.hpp"

namespace {

bl::Tensor random(bl::Rng& rng, bl::Shape shape, bool grad = false) {
  std::vector<double> v(bl::shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1, 1);
  return bl::Tensor::create(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  bl::Rng rng(1);
  const bl::Tensor a = random(rng, {n, n}), b = random(rng, {n, n});
  for (auto _ : state) benchmark::DoNotOptimize(bl::matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

void BM_Conv3x3(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  bl::Rng rng(2);
  const bl::Tensor x = random(rng, {side, side, 16}), w = random(rng, {9 * 16, 16}), b = random(rng, {16});
  for (auto _ : state) benchmark::DoNotOptimize(bl::conv2d_3x3(x, w, b).data().data());
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32);

void BM_FusionForward(benchmark::State& state) {
  bl::Rng rng(3), init(4);
  const auto f = bl::FusionModule::init(bl::FusionConfig{}, 64, 64, init, true);
  const bl::Tensor v = random(rng, {16, 64}), t = random(rng, {5, 64});
  bl::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(f.fuse(v, t).visual.data().data());
}
BENCHMARK(BM_FusionForward);

void BM_TrainEpoch(benchmark::State& state) {
  bl::ExperimentConfig cfg;
  cfg.variant = static_cast<bl::AblationVariant>(state.range(0));
  cfg.epochs = 1;
  cfg.train_eval_images = 0;
  const auto enc = bl::FrozenEncoders::stub(cfg.encoder);
  const auto fd = bl::make_synthetic_fold(cfg.seed, 0, cfg.data, 20, 1);
  for (auto _ : state) benchmark::DoNotOptimize(bl::train(cfg, enc, fd.train, fd.fold).log.epoch_loss.back());
  state.SetItemsProcessed(state.iterations() * 20);
}
BENCHMARK(BM_TrainEpoch)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

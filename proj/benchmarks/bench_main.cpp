#include <benchmark/benchmark.h>

#include "cdpo/consistency.hpp"
#include "cdpo/dpo.hpp"
#include "cdpo/preference.hpp"

using namespace cdpo;

namespace {

DenoiserNet random_denoiser(std::uint64_t seed) {
  MlpSpec spec;
  spec.n_conditions = 8;
  DenoiserNet net(spec);
  Rng rng(seed);
  net.mlp().init(rng);
  return net;
}

void BM_MlpForward(benchmark::State& state) {
  const auto net = random_denoiser(1);
  const Vec x{0.3, -0.7};
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, 17.0, 2));
}
BENCHMARK(BM_MlpForward);

void BM_MlpForwardBackward(benchmark::State& state) {
  const auto net = random_denoiser(1);
  const Vec x{0.3, -0.7}, dout{1.0, 1.0};
  Vec grad(net.params().size(), 0.0);
  for (auto _ : state) {
    MlpCache cache;
    net.forward(x, 17.0, 2, &cache);
    benchmark::DoNotOptimize(net.mlp().backward(cache, dout, grad));
  }
}
BENCHMARK(BM_MlpForwardBackward);

void BM_DiffusionDpoLoss(benchmark::State& state) {
  const auto s = build_vp_schedule(64, 1.5625e-3, 0.3125);
  const auto net = random_denoiser(1), ref = random_denoiser(2);
  const Vec w{0.5, -0.2}, l{-0.7, 0.9}, ew{0.3, 1.1}, el{-0.4, 0.2};
  const DiffusionDpoInput in{w, l, 1, 20, ew, el};
  Vec grad(net.params().size(), 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(loss_diffusion_dpo(net, ref, in, 5000.0, s, grad));
}
BENCHMARK(BM_DiffusionDpoLoss);

void BM_ConsistencyDpoLoss(benchmark::State& state) {
  const auto s = build_vp_schedule(64, 1.5625e-3, 0.3125);
  const auto grid = discretize(s, 32, 1.0);
  const auto teacher = random_denoiser(3);
  const auto student = ConsistencyNet::from_teacher(teacher, BoundaryScaling{});
  const auto ref = student;
  const Vec w{0.5, -0.2}, l{-0.7, 0.9}, e{0.3, 1.1};
  const ConsistencyDpoInput in{w, l, 0, 12, e};
  Vec grad(student.params().size(), 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(loss_consistency_dpo(student, ref, teacher, in, 200.0, s, grid, grad));
}
BENCHMARK(BM_ConsistencyDpoLoss);

void BM_AssignBatches(benchmark::State& state) {
  const auto M = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  std::vector<Example> xs;
  for (std::size_t i = 0; i < M; ++i) xs.push_back({{rng.normal()}, 0});
  const auto pool = rank_pool(xs, {"x0", [](std::span<const double> x, Condition) { return x[0]; }});
  const auto pairs = build_pairs(pool, 0.0);
  const auto limits = batch_limits(M, 5);
  for (auto _ : state) benchmark::DoNotOptimize(assign_batches(pairs, limits, DifficultyMeasure::rank));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pairs.size()));
}
BENCHMARK(BM_AssignBatches)->Arg(32)->Arg(128)->Arg(512);

}  // namespace

BENCHMARK_MAIN();

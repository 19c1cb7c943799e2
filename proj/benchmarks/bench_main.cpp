#include <benchmark/benchmark.h>

#include <random>

#include "dsanet/config.hpp"
#include "dsanet/engine.hpp"
#include "dsanet/model.hpp"
#include "dsanet/ops.hpp"
#include "dsanet/pipeline.hpp"
#include "dsanet/retrieval.hpp"

using namespace dsanet;

namespace {

Tensor uniform(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// 3x3 convolution at the resolution of the first stage, forward + backward.
void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Var x(uniform(Shape{16, c, 32, 16}, 1), true);
  Var w(uniform(Shape{c, c, 3, 3}, 2), true);
  for (auto _ : state) {
    Var y = ops::conv2d(x, w, Var(), 1, 1);
    ops::sum(y).backward();
    benchmark::DoNotOptimize(w.grad());
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv3x3)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

// Full training step on the desk-scale corpus and model.
void BM_TrainStep(benchmark::State& state) {
  config::Settings s;
  s.set("backbone.c", std::to_string(state.range(0)));
  s.set("model.components", state.range(1) ? "all" : "none");
  const auto rc = config::resolve(s);
  const auto ds = pipeline::load_dataset(rc);
  DsaNet net(config::model_for(rc, ds));
  engine::Trainer tr(net, ds, rc.train, rc.loss, rc.sampler, rc.augment, rc.augment_config);
  for (auto _ : state) benchmark::DoNotOptimize(tr.step().losses.total);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rc.sampler.p * rc.sampler.k));
}
BENCHMARK(BM_TrainStep)->Args({32, 0})->Args({32, 1})->Args({64, 1})->Unit(benchmark::kMillisecond);

void BM_CmcMap(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor d = uniform(Shape{n, 4 * n}, 3);
  std::vector<int> qid(n), gid(4 * n), qc(n), gc(4 * n);
  for (std::size_t i = 0; i < n; ++i) qid[i] = static_cast<int>(i % 50), qc[i] = static_cast<int>(i % 6);
  for (std::size_t j = 0; j < 4 * n; ++j) gid[j] = static_cast<int>(j % 50), gc[j] = static_cast<int>((j / 3) % 6);
  for (auto _ : state) benchmark::DoNotOptimize(eval::cmc_map(d, qid, gid, qc, gc).mAP);
}
BENCHMARK(BM_CmcMap)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "prefopt/corpus.hpp"
#include "prefopt/objectives.hpp"
#include "prefopt/trainer.hpp"

namespace {

using namespace prefopt;

const Dataset& data16() {
  static const Dataset d = planted_dataset(Vocab(16), 20.0, 2000, 0);
  return d;
}

void BM_SeqLogprob(benchmark::State& state) {
  const Policy p = Policy::gaussian(16, static_cast<int>(state.range(0)), 1.0, 1);
  const auto& d = data16();
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& t = d[i++ % d.size()];
    benchmark::DoNotOptimize(seq_logprob(p, t.x, t.yw));
  }
}
BENCHMARK(BM_SeqLogprob)->Arg(1)->Arg(2)->Arg(3);

void BM_EvaluateBatch(benchmark::State& state) {
  LossConfig cfg;
  cfg.method = static_cast<Method>(state.range(0));
  const Policy p = Policy::gaussian(16, 2, 0.5, 2);
  const Policy ref = Policy::gaussian(16, 2, 0.5, 3);
  const std::span<const PreferenceTriplet> batch(data16().data(), 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate_batch(cfg, p, &ref, batch).loss);
  }
  state.SetLabel(std::string(to_string(cfg.method)));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_EvaluateBatch)
    ->Arg(static_cast<int>(Method::dpo))
    ->Arg(static_cast<int>(Method::simpo))
    ->Arg(static_cast<int>(Method::rmipo))
    ->Arg(static_cast<int>(Method::beta_dpo));

void BM_TrainSteps(benchmark::State& state) {
  TrainConfig cfg;
  cfg.steps = static_cast<std::size_t>(state.range(0));
  const Policy init(16, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(train(cfg, data16(), init).policy.values().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainSteps)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

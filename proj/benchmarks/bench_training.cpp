#include <benchmark/benchmark.h>

#include <regdrop/trainer.hpp>

using namespace regdrop;

namespace {

void BM_TrainStep(benchmark::State& state, StrategyTag tag) {
  DataConfig d;
  ModelConfig c;
  c.n_layers = 8;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ff = 256;
  c.vocab_size = TaskVocab{d.grid, d.colors}.size();
  c.strategy.tag = tag;
  VlmModel m(c);
  const auto data = gen_dataset(1, 64, d);
  StageConfig s;
  s.stage = Stage::finetune;
  s.steps = 1;
  s.batch_size = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train(m, data, s).log.back().loss);
}

}  // namespace

BENCHMARK_CAPTURE(BM_TrainStep, baseline, StrategyTag::baseline)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainStep, victor, StrategyTag::victor)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainStep, fastv, StrategyTag::fastv)->Arg(4)->Unit(benchmark::kMillisecond);

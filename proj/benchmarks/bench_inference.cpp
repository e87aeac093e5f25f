#include <vector>

#include <benchmark/benchmark.h>

#include <regdrop/inference.hpp>

using namespace regdrop;

namespace {

// Small widths keep a full sweep under a minute; the token counts follow the
// 24 × 24 grid of the throughput scenario.
ModelConfig bench_config(StrategyTag tag, std::size_t tokens, std::size_t grid) {
  ModelConfig c;
  c.n_layers = 4;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ff = 256;
  c.grid = grid;
  c.strategy.tag = tag;
  c.strategy.tokens = tokens;
  c.strategy.drop_layer = 2;
  return c;
}

PromptInput random_prompt(const VlmModel& m, std::size_t text_len) {
  Rng rng(1);
  std::normal_distribution<double> normal;
  SyntheticImage img{m.config().grid, m.config().patch_dim, {}, std::vector<int>(m.config().visual_tokens(), 0)};
  img.patches.resize(m.config().visual_tokens() * m.config().patch_dim);
  for (auto& v : img.patches) v = normal(rng);
  std::vector<int> text(text_len);
  for (std::size_t i = 0; i < text_len; ++i) text[i] = static_cast<int>(i % m.config().vocab_size);
  return m.build_input(img, text);
}

void BM_Prefill(benchmark::State& state, StrategyTag tag) {
  const VlmModel m(bench_config(tag, static_cast<std::size_t>(state.range(0)), 12));
  const PromptInput in = random_prompt(m, 16);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(prefill(m, in).logits.data()[0]);
}

void BM_Decode(benchmark::State& state, StrategyTag tag) {
  const VlmModel m(bench_config(tag, static_cast<std::size_t>(state.range(0)), 12));
  const PromptInput in = random_prompt(m, 16);
  NoGradGuard ng;
  const PrefillResult p = prefill(m, in);
  for (auto _ : state) {
    state.PauseTiming();
    KVCache cache = p.cache;
    state.ResumeTiming();
    benchmark::DoNotOptimize(decode_step(m, cache, 3));
  }
}

}  // namespace

BENCHMARK_CAPTURE(BM_Prefill, baseline, StrategyTag::baseline)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Prefill, victor, StrategyTag::victor)->Arg(8)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Prefill, fastv, StrategyTag::fastv)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Decode, baseline, StrategyTag::baseline)->Arg(8)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(BM_Decode, victor, StrategyTag::victor)->Arg(8)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

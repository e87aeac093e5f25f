#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <regdrop/errors.hpp>

#include "commands.hpp"
#include "run_config.hpp"

using namespace regdrop;
using namespace regdrop::cli;

namespace {

// Flags that override fields of the configuration document.
struct Overrides {
  std::string config_path;
  std::string output_dir;
  std::string strategy;
  std::optional<std::size_t> tokens;
  std::optional<std::size_t> drop_layer;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "Run configuration (JSON)")->required();
    cmd->add_option("-o,--output", output_dir, "Override output_dir");
    cmd->add_option("--strategy", strategy, "Override model.strategy.tag");
    cmd->add_option("--tokens", tokens, "Override model.strategy.tokens (M)");
    cmd->add_option("--drop-layer", drop_layer, "Override model.strategy.drop_layer (k)");
  }

  RunConfig load() const {
    RunConfig c = load_run_config(config_path);
    if (!output_dir.empty()) c.output_dir = output_dir;
    if (!strategy.empty()) c.model.strategy.tag = strategy_tag_from_string(strategy);
    if (tokens) c.model.strategy.tokens = *tokens;
    if (drop_layer) c.model.strategy.drop_layer = *drop_layer;
    validate(c);
    return c;
  }
};

std::vector<StrategyTag> parse_tags(const std::vector<std::string>& names) {
  std::vector<StrategyTag> tags;
  for (const auto& n : names) tags.push_back(strategy_tag_from_string(n));
  return tags;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regdrop: visual-token reduction laboratory for small vision-language decoders"};
  app.require_subcommand(1);

  Overrides common;
  TrainOptions train_opts;
  EvalOptions eval_opts;
  BenchOptions bench_opts;
  std::vector<std::string> bench_strategies;
  FlopsOptions flops_opts;
  AnalyzeOptions analyze_opts;
  SweepOptions sweep_opts;
  std::vector<std::string> sweep_strategies;
  std::optional<std::vector<std::size_t>> sweep_tokens, sweep_layers;
  bool no_bench = false;

  auto* train = app.add_subcommand("train", "Run the configured stages, write checkpoint, log and timing");
  common.attach(train);
  train->add_option("--timing-steps", train_opts.timing_steps, "Timed steps for the timing probe (0 skips it)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out set");
  common.attach(eval);
  eval->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint directory (default <output>/checkpoint)");
  eval->add_option("--baseline-accuracy", eval_opts.baseline_accuracy, "Normalize by this accuracy");

  auto* bench = app.add_subcommand("bench", "Measure generation throughput against the baseline");
  common.attach(bench);
  bench->add_option("--gen-len", bench_opts.gen_lengths, "Generated tokens per stream (repeatable)");
  bench->add_option("--strategies", bench_strategies, "Strategies to measure (default: baseline + configured)")
      ->delimiter(',');
  bench->add_option("--checkpoint", bench_opts.checkpoint, "Measure this checkpoint instead of fresh weights");

  auto* flops = app.add_subcommand("flops", "Prefill FLOPs of the configured strategy and the baseline");
  common.attach(flops);
  flops->add_option("--text-len", flops_opts.text_len, "Text tokens in the prompt (default scenario.prompt_len)");

  auto* analyze = app.add_subcommand("analyze", "Export token similarity and register attention maps");
  common.attach(analyze);
  analyze->add_option("--checkpoint", analyze_opts.checkpoint, "Checkpoint directory (default <output>/checkpoint)");
  analyze->add_option("--sample", analyze_opts.sample, "Held-out sample index");

  auto* sweep = app.add_subcommand("sweep", "Train, evaluate and time a grid of (strategy, M, k) cells");
  common.attach(sweep);
  sweep->add_option("--strategies", sweep_strategies, "Override sweep.strategies")->delimiter(',');
  sweep->add_option("--tokens-list", sweep_tokens, "Override sweep.tokens")->delimiter(',');
  sweep->add_option("--drop-layers", sweep_layers, "Override sweep.drop_layers")->delimiter(',');
  sweep->add_flag("--no-bench", no_bench, "Skip throughput measurement");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const RunConfig config = common.load();
    if (*train) return cmd_train(config, train_opts);
    if (*eval) return cmd_eval(config, eval_opts);
    if (*bench) {
      bench_opts.strategies = parse_tags(bench_strategies);
      return cmd_bench(config, bench_opts);
    }
    if (*flops) return cmd_flops(config, flops_opts);
    if (*analyze) return cmd_analyze(config, analyze_opts);
    RunConfig swept = config;
    if (!sweep_strategies.empty()) swept.sweep.strategies = parse_tags(sweep_strategies);
    if (sweep_tokens) swept.sweep.tokens = *sweep_tokens;
    if (sweep_layers) swept.sweep.drop_layers = *sweep_layers;
    sweep_opts.bench = !no_bench;
    return cmd_sweep(swept, sweep_opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StrategyError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

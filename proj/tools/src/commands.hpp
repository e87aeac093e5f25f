#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <regdrop/analytics.hpp>
#include <regdrop/model.hpp>

#include "run_config.hpp"

namespace regdrop::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct TrainedRun {
  VlmModel model;
  std::vector<LogEntry> log;  // steps numbered across stages
  EvalResult eval;
};

// Runs every configured stage on the training set, then evaluates on the
// held-out set. Deterministic for a given config.
TrainedRun train_and_evaluate(const RunConfig& config, const ModelConfig& model);

struct TrainOptions {
  std::size_t timing_steps = 20;  // 0 skips the timing probe
};
int cmd_train(const RunConfig& config, const TrainOptions& options);

struct EvalOptions {
  std::string checkpoint;  // defaults to <output_dir>/checkpoint
  std::optional<double> baseline_accuracy;
};
int cmd_eval(const RunConfig& config, const EvalOptions& options);

struct BenchOptions {
  std::vector<std::size_t> gen_lengths{2, 128};
  std::vector<StrategyTag> strategies;  // empty: baseline + configured strategy
  std::string checkpoint;               // empty: freshly initialized weights
};
int cmd_bench(const RunConfig& config, const BenchOptions& options);

struct FlopsOptions {
  std::optional<std::size_t> text_len;  // defaults to scenario.prompt_len
};
int cmd_flops(const RunConfig& config, const FlopsOptions& options);

struct AnalyzeOptions {
  std::string checkpoint;
  std::size_t sample = 0;  // index into the held-out set
};
int cmd_analyze(const RunConfig& config, const AnalyzeOptions& options);

struct SweepOptions {
  bool bench = true;
};

struct SweepRow {
  std::string strategy;
  std::size_t tokens = 0;
  std::size_t drop_layer = 0;
  double accuracy = 0.0;
  double normalized = 0.0;
  std::optional<double> tps_ratio;
  double flops_ratio = 0.0;
  std::size_t extra_params = 0;
};

std::string sweep_csv(const std::vector<SweepRow>& rows);
int cmd_sweep(const RunConfig& config, const SweepOptions& options);

}  // namespace regdrop::cli

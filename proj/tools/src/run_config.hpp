#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include <regdrop/config.hpp>
#include <regdrop/inference.hpp>
#include <regdrop/trainer.hpp>

namespace regdrop::cli {

inline constexpr int kSchemaVersion = 1;

struct DataSection {
  DataConfig task;
  std::size_t train_count = 20000;
  std::size_t eval_count = 1000;
};

struct SweepSection {
  std::vector<StrategyTag> strategies{StrategyTag::victor};
  std::vector<std::size_t> tokens{8, 16, 32, 64};
  std::vector<std::size_t> drop_layers{3};
};

// Everything a run needs, read from one JSON document. The top-level seed
// draws the training set; the held-out set uses a separated seed.
struct RunConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  ModelConfig model;
  DataSection data;
  std::vector<StageConfig> stages;
  Scenario scenario;
  SweepSection sweep;

  std::uint64_t train_seed() const { return seed; }
  std::uint64_t eval_seed() const { return seed + 1'000'003; }
  TaskVocab vocab() const { return TaskVocab{data.task.grid, data.task.colors}; }
};

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

// Reads, parses and validates as a whole. Throws ConfigError naming the path
// or the offending key.
RunConfig load_run_config(const std::string& path);

// Cross-section checks: model and task shapes agree, stages are usable.
void validate(const RunConfig& config);

nlohmann::json to_json(const DataConfig& data);

}  // namespace regdrop::cli

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "regdrop/model.hpp"

namespace regdrop {

// Per-layer key/value cache for one stream, tied to the model that filled it.
struct KVCache {
  std::vector<LayerCache> layers;
  std::string fingerprint;
  TokenLayout layout;          // layout after prefill (post-drop if a drop happened)
  std::size_t prompt_rows = 0; // rows of the undropped prompt

  bool empty() const { return layers.empty(); }
};

// Identifies the model a cache belongs to: configuration plus parameter storage.
std::string cache_fingerprint(const VlmModel& model);

struct PrefillResult {
  Tensor logits;  // 1 × vocab, last prompt position
  KVCache cache;
  std::vector<std::size_t> layer_lengths;
};

PrefillResult prefill(const VlmModel& model, const PromptInput& input);

// Appends one token; throws CacheError when the cache is empty or belongs to
// another model.
Tensor decode_step(const VlmModel& model, KVCache& cache, int token);

int argmax(std::span<const double> row);

struct GenerationResult {
  std::vector<int> tokens;
  double prefill_seconds = 0.0;
  double decode_seconds = 0.0;
};

// Greedy: the first token comes from prefill, the other n-1 from decode steps.
GenerationResult generate(const VlmModel& model, const PromptInput& input, std::size_t n_tokens);

struct Scenario {
  std::size_t batch = 16;
  std::size_t prompt_len = 64;
  std::size_t gen_tokens = 2;
  std::size_t warmup = 1;
  std::size_t reps = 5;
  std::size_t workers = 1;
  std::uint64_t seed = 7;

  bool same_workload(const Scenario& other) const;
};

// Worker count from REGDROP_WORKERS, else `fallback`.
std::size_t workers_from_env(std::size_t fallback = 1);

nlohmann::json to_json(const Scenario& scenario);
Scenario scenario_from_json(const nlohmann::json& j, const std::string& path = "scenario");

struct ThroughputReport {
  std::string label;
  Scenario scenario;
  double tps = 0.0;           // generated tokens / wall time of the batch, median over reps
  double tps_min = 0.0;
  double tps_max = 0.0;
  double prefill_ms = 0.0;    // median batch prefill time
  double decode_ms = 0.0;     // median batch decode time
  std::vector<double> rep_tps;
  std::size_t visual_tokens = 0;
  std::size_t final_length = 0;
  nlohmann::json config;
  std::optional<double> ratio_vs_baseline;
};

nlohmann::json to_json(const ThroughputReport& report);

// Runs `scenario.batch` independent streams on random images and prompts,
// `warmup` untimed passes then `reps` timed ones.
ThroughputReport bench(const VlmModel& model, const Scenario& scenario, const std::string& label = "");

// report.tps / baseline.tps; the scenarios must describe the same workload.
double throughput_ratio(const ThroughputReport& report, const ThroughputReport& baseline);

}  // namespace regdrop

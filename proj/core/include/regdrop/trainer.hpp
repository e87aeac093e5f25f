#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "regdrop/model.hpp"

namespace regdrop {

// Token ids of the cell-color question task.
//   0: ask   1: "image" word   2..2+g²: cells (r·g + c)   then C colors
// A question is the single token naming the queried cell.
struct TaskVocab {
  std::size_t grid = 8;
  std::size_t colors = 8;

  static constexpr int ask = 0;
  static constexpr int image_word = 1;
  int cell(std::size_t row, std::size_t col) const { return static_cast<int>(2 + row * grid + col); }
  int color(std::size_t k) const { return static_cast<int>(2 + grid * grid + k); }
  std::size_t size() const { return 2 + grid * grid + colors; }
  // Color index for a token id, or -1 when the token is not a color.
  int color_of(int token) const;
};

struct SyntheticSample {
  SyntheticImage image;
  std::vector<int> question;  // [cell (r, c)]
  int answer = 0;             // color token of cell (r, c)
  std::size_t cell = 0;       // r·g + c
};

struct DataConfig {
  std::size_t grid = 8;
  std::size_t colors = 8;
  std::size_t patch_dim = 16;
  double noise_std = 0.1;
  std::uint64_t palette_seed = 20240601;
};

// Color prototypes shared by every dataset drawn with the same palette seed.
std::vector<std::vector<double>> palette_prototypes(std::size_t colors, std::size_t patch_dim,
                                                    std::uint64_t palette_seed);

// Uniform colors per cell and a uniform queried cell; reproducible under `seed`.
std::vector<SyntheticSample> gen_dataset(std::uint64_t seed, std::size_t count, const DataConfig& data);

enum class Stage { pretrain, finetune };
std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

enum class LrSchedule { constant, cosine };
std::string to_string(LrSchedule schedule);
LrSchedule lr_schedule_from_string(const std::string& name);

struct StageConfig {
  Stage stage = Stage::pretrain;
  double learning_rate = 1e-4;
  // Linear ramp over the first warmup_steps, then the schedule decays to 0.
  LrSchedule schedule = LrSchedule::constant;
  std::size_t warmup_steps = 0;
  std::size_t steps = 100;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  // Registers (and resampler weights) keep training after the first stage.
  bool train_added_params = true;
};

// Learning rate used at `step` (0-based).
double learning_rate_at(const StageConfig& stage, std::size_t step);

nlohmann::json to_json(const StageConfig& stage);
StageConfig stage_config_from_json(const nlohmann::json& j, const std::string& path = "stage");

// Parameter groups a stage updates: pretrain -> projector + added; finetune ->
// projector + added + language. The vision tower never trains.
std::vector<ParamGroup> trainable_groups(const StageConfig& stage);

struct LogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;  // wall time of this step
};

nlohmann::json to_json(const LogEntry& entry);

struct TrainResult {
  std::vector<LogEntry> log;
  double seconds = 0.0;
};

// Cross-entropy on the answer position of one sample.
Tensor sample_loss(const VlmModel& model, const SyntheticSample& sample);

// Trains the stage's parameter groups with AdamW; the rest are left bit-identical.
// Throws NumericError when the loss stops being finite.
TrainResult train(VlmModel& model, std::span<const SyntheticSample> dataset, const StageConfig& stage,
                  const std::function<void(const LogEntry&)>& on_step = {});

struct EvalResult {
  std::size_t correct = 0;
  std::size_t count = 0;
  double accuracy = 0.0;
  std::optional<double> normalized;  // accuracy / baseline accuracy

  void normalize_by(double baseline_accuracy);
};

nlohmann::json to_json(const EvalResult& result);

// Greedy answer at the last prompt position, decoded over the color tokens
// only, compared with the ground truth.
EvalResult evaluate(const VlmModel& model, std::span<const SyntheticSample> dataset, const TaskVocab& vocab);

// Color token with the highest logit in a 1 × vocab row.
int predict_color(std::span<const double> logits, const TaskVocab& vocab);

struct TimingReport {
  std::string strategy;
  std::size_t steps = 0;
  double step_seconds = 0.0;      // median
  double forward_seconds = 0.0;   // median
  double backward_seconds = 0.0;  // median, includes the optimizer update
  std::vector<double> samples;
};

nlohmann::json to_json(const TimingReport& report);

// Times `timed_steps` (at least 20) training steps after `warmup` on a private
// copy of the model.
TimingReport timing_probe(const VlmModel& model, std::span<const SyntheticSample> dataset, const StageConfig& stage,
                          std::size_t warmup = 2, std::size_t timed_steps = 20);

double timing_ratio(const TimingReport& report, const TimingReport& baseline);

}  // namespace regdrop

#include "regdrop/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "regdrop/errors.hpp"
#include "regdrop/inference.hpp"
#include "regdrop/json_fields.hpp"
#include "regdrop/optim.hpp"

namespace regdrop {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

bool is_trainable(ParamGroup group, const std::vector<ParamGroup>& groups) {
  return std::find(groups.begin(), groups.end(), group) != groups.end();
}

// Switches requires_grad to the stage's trainable set and restores the
// previous flags on scope exit.
class FreezeScope {
 public:
  FreezeScope(const VlmModel& model, const std::vector<ParamGroup>& groups) {
    for (auto& p : model.parameters()) {
      saved_.emplace_back(p.tensor, p.tensor.requires_grad());
      const bool train = is_trainable(p.group, groups);
      p.tensor.set_requires_grad(train);
      if (train) trainable_.push_back(p.tensor);
    }
  }
  ~FreezeScope() {
    for (auto& [t, flag] : saved_) t.set_requires_grad(flag);
  }
  FreezeScope(const FreezeScope&) = delete;
  FreezeScope& operator=(const FreezeScope&) = delete;

  const std::vector<Tensor>& trainable() const { return trainable_; }

 private:
  std::vector<std::pair<Tensor, bool>> saved_;
  std::vector<Tensor> trainable_;
};

std::vector<std::size_t> draw_batch(Rng& rng, std::size_t count, std::size_t batch) {
  std::uniform_int_distribution<std::size_t> pick(0, count - 1);
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

struct StepTiming {
  double loss = 0.0;
  double forward = 0.0;
  double backward = 0.0;
};

StepTiming run_step(const VlmModel& model, std::span<const SyntheticSample> dataset, std::span<const std::size_t> batch,
                    AdamW& optimizer) {
  StepTiming t;
  optimizer.zero_grad();
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch) {
    auto start = Clock::now();
    const Tensor loss = sample_loss(model, dataset[i]);
    t.forward += seconds_since(start);
    t.loss += weight * loss.item();
    start = Clock::now();
    scale(loss, weight).backward();
    t.backward += seconds_since(start);
  }
  if (!std::isfinite(t.loss)) {
    throw NumericError("train: loss became " + std::to_string(t.loss) + "; aborting before the update");
  }
  const auto start = Clock::now();
  optimizer.step();
  t.backward += seconds_since(start);
  return t;
}

}  // namespace

int TaskVocab::color_of(int token) const {
  const int first = color(0);
  if (token < first || token >= first + static_cast<int>(colors)) return -1;
  return token - first;
}

std::vector<std::vector<double>> palette_prototypes(std::size_t colors, std::size_t patch_dim,
                                                    std::uint64_t palette_seed) {
  Rng rng(palette_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> palette(colors, std::vector<double>(patch_dim));
  for (auto& proto : palette) {
    for (auto& v : proto) v = normal(rng);
  }
  return palette;
}

std::vector<SyntheticSample> gen_dataset(std::uint64_t seed, std::size_t count, const DataConfig& d) {
  if (d.colors < 2) throw ConfigError("data.colors: need at least 2 colors");
  if (d.grid < 2) throw ConfigError("data.grid: need at least a 2x2 grid");
  if (d.patch_dim == 0) throw ConfigError("data.patch_dim: must be positive");
  if (d.noise_std < 0.0) throw ConfigError("data.noise_std: must be non-negative");
  const TaskVocab vocab{d.grid, d.colors};
  const auto palette = palette_prototypes(d.colors, d.patch_dim, d.palette_seed);
  const std::size_t cells = d.grid * d.grid;

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_color(0, d.colors - 1);
  std::uniform_int_distribution<std::size_t> pick_cell(0, cells - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<SyntheticSample> out(count);
  for (auto& s : out) {
    s.image.grid = d.grid;
    s.image.patch_dim = d.patch_dim;
    s.image.labels.resize(cells);
    s.image.patches.resize(cells * d.patch_dim);
    for (std::size_t c = 0; c < cells; ++c) {
      const std::size_t color = pick_color(rng);
      s.image.labels[c] = static_cast<int>(color);
      for (std::size_t k = 0; k < d.patch_dim; ++k) {
        const double jitter = d.noise_std > 0.0 ? d.noise_std * noise(rng) : 0.0;
        s.image.patches[c * d.patch_dim + k] = palette[color][k] + jitter;
      }
    }
    s.cell = pick_cell(rng);
    s.question = {vocab.cell(s.cell / d.grid, s.cell % d.grid)};
    s.answer = vocab.color(static_cast<std::size_t>(s.image.labels[s.cell]));
  }
  return out;
}

std::string to_string(Stage stage) { return stage == Stage::pretrain ? "pretrain" : "finetune"; }

Stage stage_from_string(const std::string& name) {
  if (name == "pretrain") return Stage::pretrain;
  if (name == "finetune") return Stage::finetune;
  throw ConfigError("unknown stage '" + name + "'");
}

std::string to_string(LrSchedule schedule) { return schedule == LrSchedule::constant ? "constant" : "cosine"; }

LrSchedule lr_schedule_from_string(const std::string& name) {
  if (name == "constant") return LrSchedule::constant;
  if (name == "cosine") return LrSchedule::cosine;
  throw ConfigError("unknown learning-rate schedule '" + name + "'");
}

double learning_rate_at(const StageConfig& s, std::size_t step) {
  if (step < s.warmup_steps) {
    return s.learning_rate * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
  }
  if (s.schedule == LrSchedule::constant) return s.learning_rate;
  const double span = static_cast<double>(std::max<std::size_t>(1, s.steps - std::min(s.steps, s.warmup_steps)));
  const double progress = static_cast<double>(step - s.warmup_steps) / span;
  return 0.5 * s.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
}

json to_json(const StageConfig& s) {
  return json{{"stage", to_string(s.stage)},
              {"learning_rate", s.learning_rate},
              {"schedule", to_string(s.schedule)},
              {"warmup_steps", s.warmup_steps},
              {"steps", s.steps},
              {"batch_size", s.batch_size},
              {"seed", s.seed},
              {"train_added_params", s.train_added_params}};
}

StageConfig stage_config_from_json(const json& j, const std::string& path) {
  StageConfig s;
  FieldReader r(j, path);
  r.read_enum("stage", s.stage, stage_from_string);
  r.read("learning_rate", s.learning_rate);
  r.read_enum("schedule", s.schedule, lr_schedule_from_string);
  r.read_size("warmup_steps", s.warmup_steps);
  r.read_size("steps", s.steps);
  r.read_size("batch_size", s.batch_size);
  r.read("seed", s.seed);
  r.read("train_added_params", s.train_added_params);
  r.finish();
  if (!(s.learning_rate > 0.0) || !std::isfinite(s.learning_rate)) {
    throw ConfigError(path + ".learning_rate: must be positive");
  }
  if (s.batch_size == 0) throw ConfigError(path + ".batch_size: must be positive");
  return s;
}

std::vector<ParamGroup> trainable_groups(const StageConfig& stage) {
  std::vector<ParamGroup> groups{ParamGroup::projector, ParamGroup::registers, ParamGroup::resampler};
  if (stage.stage == Stage::finetune) {
    if (!stage.train_added_params) groups = {ParamGroup::projector};
    groups.push_back(ParamGroup::language);
  }
  return groups;
}

json to_json(const LogEntry& e) {
  return json{{"step", e.step}, {"loss", e.loss}, {"lr", e.lr}, {"seconds", e.seconds}};
}

Tensor sample_loss(const VlmModel& model, const SyntheticSample& sample) {
  const PromptInput input = model.build_input(sample.image, sample.question);
  const ForwardResult f = model.forward(input.embeddings, input.layout);
  const std::size_t last = f.logits.rows() - 1;
  const int target[1] = {sample.answer};
  return cross_entropy(slice_rows(f.logits, last, last + 1), target);
}

TrainResult train(VlmModel& model, std::span<const SyntheticSample> dataset, const StageConfig& stage,
                  const std::function<void(const LogEntry&)>& on_step) {
  TrainResult result;
  if (stage.steps == 0) return result;
  if (dataset.empty()) throw DataError("train: empty dataset");
  if (stage.batch_size == 0) throw ConfigError("stage.batch_size: must be positive");

  FreezeScope freeze(model, trainable_groups(stage));
  AdamWConfig opt;
  opt.learning_rate = stage.learning_rate;
  AdamW optimizer(freeze.trainable(), opt);
  Rng rng(stage.seed);
  const auto start = Clock::now();
  for (std::size_t step = 0; step < stage.steps; ++step) {
    const auto step_start = Clock::now();
    const double lr = learning_rate_at(stage, step);
    optimizer.set_learning_rate(lr);
    const auto batch = draw_batch(rng, dataset.size(), stage.batch_size);
    const StepTiming t = run_step(model, dataset, batch, optimizer);
    LogEntry e{step, t.loss, lr, seconds_since(step_start)};
    result.log.push_back(e);
    if (on_step) on_step(e);
  }
  optimizer.zero_grad();
  result.seconds = seconds_since(start);
  return result;
}

void EvalResult::normalize_by(double baseline_accuracy) {
  if (!(baseline_accuracy > 0.0)) throw ContractError("normalize_by: baseline accuracy must be positive");
  normalized = accuracy / baseline_accuracy;
}

json to_json(const EvalResult& r) {
  json j{{"correct", r.correct}, {"count", r.count}, {"accuracy", r.accuracy}};
  j["normalized"] = r.normalized ? json(*r.normalized) : json(nullptr);
  return j;
}

int predict_color(std::span<const double> logits, const TaskVocab& vocab) {
  const auto first = static_cast<std::size_t>(vocab.color(0));
  if (logits.size() < first + vocab.colors) throw ShapeError("predict_color: logits do not cover the color tokens");
  return static_cast<int>(first) + argmax(logits.subspan(first, vocab.colors));
}

EvalResult evaluate(const VlmModel& model, std::span<const SyntheticSample> dataset, const TaskVocab& vocab) {
  NoGradGuard no_grad;
  EvalResult r;
  for (const auto& s : dataset) {
    const PromptInput input = model.build_input(s.image, s.question);
    const PrefillResult p = prefill(model, input);
    if (predict_color(p.logits.data(), vocab) == s.answer) ++r.correct;
  }
  r.count = dataset.size();
  r.accuracy = r.count ? static_cast<double>(r.correct) / static_cast<double>(r.count) : 0.0;
  return r;
}

json to_json(const TimingReport& r) {
  return json{{"strategy", r.strategy},
              {"steps", r.steps},
              {"step_seconds", r.step_seconds},
              {"forward_seconds", r.forward_seconds},
              {"backward_seconds", r.backward_seconds},
              {"samples", r.samples}};
}

TimingReport timing_probe(const VlmModel& model, std::span<const SyntheticSample> dataset, const StageConfig& stage,
                          std::size_t warmup, std::size_t timed_steps) {
  if (timed_steps < 20) throw ConfigError("timing_probe: need at least 20 timed steps");
  if (dataset.empty()) throw DataError("timing_probe: empty dataset");
  VlmModel copy = model.deep_copy();
  FreezeScope freeze(copy, trainable_groups(stage));
  AdamWConfig opt;
  opt.learning_rate = stage.learning_rate;
  AdamW optimizer(freeze.trainable(), opt);
  Rng rng(stage.seed);

  TimingReport r;
  r.strategy = to_string(model.config().strategy.tag);
  std::vector<double> fwd, bwd;
  for (std::size_t step = 0; step < warmup + timed_steps; ++step) {
    const auto batch = draw_batch(rng, dataset.size(), stage.batch_size);
    const auto start = Clock::now();
    const StepTiming t = run_step(copy, dataset, batch, optimizer);
    const double total = seconds_since(start);
    if (step < warmup) continue;
    r.samples.push_back(total);
    fwd.push_back(t.forward);
    bwd.push_back(t.backward);
  }
  r.steps = timed_steps;
  r.step_seconds = median(r.samples);
  r.forward_seconds = median(fwd);
  r.backward_seconds = median(bwd);
  return r;
}

double timing_ratio(const TimingReport& report, const TimingReport& baseline) {
  if (!(baseline.step_seconds > 0.0)) throw ContractError("timing_ratio: baseline step time is not positive");
  return report.step_seconds / baseline.step_seconds;
}

}  // namespace regdrop

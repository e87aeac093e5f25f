#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

#include <regdrop/checkpoint.hpp>
#include <regdrop/errors.hpp>
#include <regdrop/inference.hpp>
#include <regdrop/strategies.hpp>

namespace regdrop::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_log(const fs::path& path, const std::vector<LogEntry>& log) {
  std::string text;
  for (const auto& e : log) text += to_json(e).dump() + "\n";
  write_text(path, text);
}

VlmModel load_existing_checkpoint(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest.json")) throw ConfigError("checkpoint not found: '" + dir + "'");
  return load_checkpoint(dir);
}

std::string checkpoint_dir(const RunConfig& config, const std::string& flag) {
  return flag.empty() ? (fs::path(config.output_dir) / "checkpoint").string() : flag;
}

void check_task_fits(const RunConfig& config, const ModelConfig& model) {
  if (model.grid != config.data.task.grid || model.patch_dim != config.data.task.patch_dim) {
    throw ConfigError("checkpoint model (grid " + std::to_string(model.grid) + ", patch_dim " +
                      std::to_string(model.patch_dim) + ") does not fit data section");
  }
  if (model.vocab_size < config.vocab().size()) throw ConfigError("checkpoint vocabulary is smaller than the task's");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string cell_name(const ModelConfig& m) {
  return to_string(m.strategy.tag) + "_M" + std::to_string(m.strategy.tokens) + "_k" +
         std::to_string(m.strategy.drop_layer);
}

}  // namespace

TrainedRun train_and_evaluate(const RunConfig& config, const ModelConfig& model) {
  TrainedRun run{VlmModel(model), {}, {}};
  const auto train_set = gen_dataset(config.train_seed(), config.data.train_count, config.data.task);
  const auto held_out = gen_dataset(config.eval_seed(), config.data.eval_count, config.data.task);
  std::size_t offset = 0;
  for (const auto& stage : config.stages) {
    for (LogEntry e : train(run.model, train_set, stage).log) {
      e.step += offset;
      run.log.push_back(e);
    }
    offset += stage.steps;
  }
  run.eval = evaluate(run.model, held_out, config.vocab());
  return run;
}

int cmd_train(const RunConfig& config, const TrainOptions& options) {
  const fs::path out(config.output_dir);
  TrainedRun run = train_and_evaluate(config, config.model);
  save_checkpoint(run.model, (out / "checkpoint").string());
  write_log(out / "train_log.jsonl", run.log);
  write_json(out / "eval.json", to_json(run.eval));
  write_json(out / "config.json", to_json(config));
  if (options.timing_steps > 0) {
    StageConfig stage = config.stages.empty() ? StageConfig{} : config.stages.back();
    const auto probe_set = gen_dataset(config.train_seed(), std::min<std::size_t>(config.data.train_count, 256),
                                       config.data.task);
    write_json(out / "timing.json", to_json(timing_probe(run.model, probe_set, stage, 2, options.timing_steps)));
  }
  std::cout << cell_name(config.model) << ": " << run.log.size() << " steps, held-out accuracy "
            << format_double(run.eval.accuracy) << " -> " << out.string() << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& config, const EvalOptions& options) {
  const VlmModel model = load_existing_checkpoint(checkpoint_dir(config, options.checkpoint));
  check_task_fits(config, model.config());
  const auto held_out = gen_dataset(config.eval_seed(), config.data.eval_count, config.data.task);
  EvalResult r = evaluate(model, held_out, config.vocab());
  if (options.baseline_accuracy) r.normalize_by(*options.baseline_accuracy);
  write_json(fs::path(config.output_dir) / "eval.json", to_json(r));
  std::cout << to_json(r).dump() << "\n";
  return kExitOk;
}

int cmd_bench(const RunConfig& config, const BenchOptions& options) {
  if (options.gen_lengths.empty()) throw ConfigError("bench: no generation lengths selected");
  std::vector<VlmModel> models;
  if (!options.checkpoint.empty()) {
    models.push_back(load_existing_checkpoint(options.checkpoint));
  } else {
    std::vector<StrategyTag> tags = options.strategies;
    if (tags.empty()) tags = {StrategyTag::baseline, config.model.strategy.tag};
    for (StrategyTag tag : tags) {
      ModelConfig m = config.model;
      m.strategy.tag = tag;
      models.emplace_back(m);
    }
  }
  if (std::none_of(models.begin(), models.end(),
                   [](const VlmModel& m) { return m.config().strategy.tag == StrategyTag::baseline; })) {
    // Throughput does not depend on weight values, so a fresh baseline is a fair denominator.
    ModelConfig m = models.front().config();
    m.strategy.tag = StrategyTag::baseline;
    models.insert(models.begin(), VlmModel(m));
  }

  Scenario scenario = config.scenario;
  scenario.workers = workers_from_env(scenario.workers);
  json runs = json::array();
  for (std::size_t gen : options.gen_lengths) {
    if (gen == 0) throw ConfigError("bench: --gen-len must be positive");
    scenario.gen_tokens = gen;
    std::vector<ThroughputReport> reports;
    for (const auto& m : models) reports.push_back(bench(m, scenario, cell_name(m.config())));
    const auto base = std::find_if(reports.begin(), reports.end(), [](const ThroughputReport& r) {
      return r.config.at("strategy").at("tag") == "baseline";
    });
    for (auto& r : reports) {
      r.ratio_vs_baseline = throughput_ratio(r, *base);
      std::cout << "gen " << gen << "  " << r.label << "  tps " << format_double(r.tps) << "  ratio "
                << format_double(*r.ratio_vs_baseline) << "\n";
      runs.push_back(to_json(r));
    }
  }
  write_json(fs::path(config.output_dir) / "bench.json", json{{"runs", runs}});
  return kExitOk;
}

int cmd_flops(const RunConfig& config, const FlopsOptions& options) {
  const std::size_t text = options.text_len.value_or(config.scenario.prompt_len);
  ModelConfig base = config.model;
  base.strategy.tag = StrategyTag::baseline;
  const json j{{"text_len", text},
               {"reports", json::array({to_json(model_flops(base, text)), to_json(model_flops(config.model, text))})}};
  write_json(fs::path(config.output_dir) / "flops.json", j);
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_analyze(const RunConfig& config, const AnalyzeOptions& options) {
  const VlmModel model = load_existing_checkpoint(checkpoint_dir(config, options.checkpoint));
  check_task_fits(config, model.config());
  if (!model.uses_eager_attention(true)) throw StrategyError("analyze: attention scores are unavailable");
  if (options.sample >= config.data.eval_count) {
    throw ConfigError("analyze: --sample " + std::to_string(options.sample) + " is outside the held-out set");
  }
  const auto held_out = gen_dataset(config.eval_seed(), options.sample + 1, config.data.task);
  const SyntheticSample& sample = held_out.back();

  NoGradGuard no_grad;
  const PromptInput input = model.build_input(sample.image, sample.question);
  ForwardOptions fwd;
  fwd.capture = true;
  const ForwardResult f = model.forward(input.embeddings, input.layout, fwd);

  const fs::path out = fs::path(config.output_dir) / "analysis";
  write_json(out / "similarity.json", to_json(cosine_similarity_stats(input.visual_tokens)));
  if (input.layout.registers == 0) {
    std::cout << "no registers in " << to_string(model.config().strategy.tag) << "; wrote similarity only\n";
    return kExitOk;
  }
  const std::size_t k = std::min(model.config().strategy.drop_layer, model.config().n_layers);
  std::vector<std::size_t> layers(k);
  for (std::size_t i = 0; i < k; ++i) layers[i] = i;
  const RegisterAttentionMap map = register_attention_map(f.records, input.layout, layers);
  write_json(out / "attention.json", to_json(map));
  const std::size_t g = std::size_t(std::lround(std::sqrt(static_cast<double>(map.visual))));
  for (std::size_t slot = 0; slot < map.layers.size(); ++slot) {
    for (std::size_t r = 0; r < map.registers; ++r) {
      const std::span<const double> row(map.maps[slot].data() + r * map.visual, map.visual);
      write_text(out / ("layer" + std::to_string(map.layers[slot]) + "_register" + std::to_string(r) + ".csv"),
                 grid_to_csv(attention_to_grid(row, g)));
    }
  }
  std::cout << "wrote " << map.layers.size() << " layer maps for " << map.registers << " registers to "
            << out.string() << "\n";
  return kExitOk;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream csv;
  csv << "strategy,M,k,accuracy,normalized_score,tps_ratio,flops_ratio,extra_params\n";
  for (const auto& r : rows) {
    csv << r.strategy << ',' << r.tokens << ',' << r.drop_layer << ',' << format_double(r.accuracy) << ','
        << format_double(r.normalized) << ',' << (r.tps_ratio ? format_double(*r.tps_ratio) : "") << ','
        << format_double(r.flops_ratio) << ',' << r.extra_params << '\n';
  }
  return csv.str();
}

int cmd_sweep(const RunConfig& config, const SweepOptions& options) {
  const SweepSection& s = config.sweep;
  if (s.strategies.empty() || s.tokens.empty() || s.drop_layers.empty()) {
    throw ConfigError("sweep: strategies, tokens and drop_layers must all be non-empty");
  }
  ModelConfig base = config.model;
  base.strategy.tag = StrategyTag::baseline;
  std::vector<ModelConfig> cells;
  for (StrategyTag tag : s.strategies) {
    if (tag == StrategyTag::baseline) continue;  // always run once as the denominator
    for (std::size_t m : s.tokens) {
      for (std::size_t k : s.drop_layers) {
        ModelConfig c = config.model;
        c.strategy.tag = tag;
        c.strategy.tokens = m;
        c.strategy.drop_layer = k;
        regdrop::validate(c);
        apply_strategy(c.strategy, c);
        cells.push_back(c);
      }
    }
  }
  cells.insert(cells.begin(), base);

  // Cells are independent; train them in groups of REGDROP_WORKERS.
  const std::size_t workers = workers_from_env(1);
  std::vector<std::optional<TrainedRun>> runs(cells.size());
  for (std::size_t first = 0; first < cells.size(); first += workers) {
    std::vector<std::future<TrainedRun>> jobs;
    const std::size_t last = std::min(cells.size(), first + workers);
    for (std::size_t i = first; i < last; ++i) {
      jobs.push_back(std::async(std::launch::async, [&config, &cells, i] { return train_and_evaluate(config, cells[i]); }));
    }
    for (std::size_t i = first; i < last; ++i) {
      runs[i].emplace(jobs[i - first].get());
      const fs::path dir = fs::path(config.output_dir) / "sweep" / cell_name(cells[i]);
      write_log(dir / "train_log.jsonl", runs[i]->log);
      write_json(dir / "eval.json", to_json(runs[i]->eval));
      std::cerr << cell_name(cells[i]) << ": accuracy " << format_double(runs[i]->eval.accuracy) << "\n";
    }
  }

  // Timing runs one cell at a time so measurements do not contend.
  std::optional<ThroughputReport> base_report;
  Scenario scenario = config.scenario;
  const double base_acc = runs.front()->eval.accuracy;
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const ModelConfig& c = cells[i];
    SweepRow row;
    row.strategy = to_string(c.strategy.tag);
    row.tokens = i == 0 ? c.visual_tokens() : c.strategy.tokens;
    row.drop_layer = i == 0 ? c.n_layers : c.strategy.drop_layer;
    row.accuracy = runs[i]->eval.accuracy;
    row.normalized = base_acc > 0.0 ? row.accuracy / base_acc : 0.0;
    row.flops_ratio = model_flops(c, scenario.prompt_len).ratio;
    row.extra_params = count_extra_params(c).extra;
    if (options.bench) {
      const ThroughputReport r = bench(runs[i]->model, scenario, cell_name(c));
      if (!base_report) base_report = r;
      row.tps_ratio = throughput_ratio(r, *base_report);
    }
    rows.push_back(row);
  }
  const std::string csv = sweep_csv(rows);
  write_text(fs::path(config.output_dir) / "sweep.csv", csv);
  std::cout << csv;
  return kExitOk;
}

}  // namespace regdrop::cli

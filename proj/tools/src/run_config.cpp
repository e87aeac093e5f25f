#include "run_config.hpp"

#include <fstream>

#include <regdrop/errors.hpp>
#include <regdrop/json_fields.hpp>
#include <regdrop/strategies.hpp>

namespace regdrop::cli {

using nlohmann::json;

namespace {

DataSection data_from_json(const json& j, const std::string& path) {
  DataSection d;
  FieldReader r(j, path);
  r.read_size("grid", d.task.grid);
  r.read_size("colors", d.task.colors);
  r.read_size("patch_dim", d.task.patch_dim);
  r.read("noise_std", d.task.noise_std);
  r.read("palette_seed", d.task.palette_seed);
  r.read_size("train_count", d.train_count);
  r.read_size("eval_count", d.eval_count);
  r.finish();
  return d;
}

std::vector<std::size_t> size_list(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array");
  std::vector<std::size_t> out;
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(path + ": expected non-negative integers");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

SweepSection sweep_from_json(const json& j, const std::string& path) {
  SweepSection s;
  FieldReader r(j, path);
  if (const json* v = r.object("strategies")) {
    if (!v->is_array()) throw ConfigError(path + ".strategies: expected an array");
    s.strategies.clear();
    for (const auto& name : *v) {
      if (!name.is_string()) throw ConfigError(path + ".strategies: expected strategy names");
      try {
        s.strategies.push_back(strategy_tag_from_string(name.get<std::string>()));
      } catch (const ConfigError& e) {
        throw ConfigError(path + ".strategies: " + e.what());
      }
    }
  }
  if (const json* v = r.object("tokens")) s.tokens = size_list(*v, path + ".tokens");
  if (const json* v = r.object("drop_layers")) s.drop_layers = size_list(*v, path + ".drop_layers");
  r.finish();
  return s;
}

json to_json(const SweepSection& s) {
  json names = json::array();
  for (auto t : s.strategies) names.push_back(to_string(t));
  return json{{"strategies", names}, {"tokens", s.tokens}, {"drop_layers", s.drop_layers}};
}

}  // namespace

json to_json(const DataConfig& d) {
  return json{{"grid", d.grid},
              {"colors", d.colors},
              {"patch_dim", d.patch_dim},
              {"noise_std", d.noise_std},
              {"palette_seed", d.palette_seed}};
}

json to_json(const RunConfig& c) {
  json data = to_json(c.data.task);
  data["train_count"] = c.data.train_count;
  data["eval_count"] = c.data.eval_count;
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back(regdrop::to_json(s));
  return json{{"schema_version", c.schema_version},
              {"seed", c.seed},
              {"output_dir", c.output_dir},
              {"model", regdrop::to_json(c.model)},
              {"data", data},
              {"stages", stages},
              {"scenario", regdrop::to_json(c.scenario)},
              {"sweep", to_json(c.sweep)}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  FieldReader r(j, "config");
  if (!j.contains("schema_version")) throw ConfigError("config.schema_version: required");
  r.read("schema_version", c.schema_version);
  if (c.schema_version != kSchemaVersion) {
    throw ConfigError("config.schema_version: unsupported version " + std::to_string(c.schema_version) +
                      " (expected " + std::to_string(kSchemaVersion) + ")");
  }
  r.read("seed", c.seed);
  r.read("output_dir", c.output_dir);
  if (const json* m = r.object("model")) c.model = model_config_from_json(*m, "model");
  if (const json* d = r.object("data")) c.data = data_from_json(*d, "data");
  if (const json* s = r.object("stages")) {
    if (!s->is_array()) throw ConfigError("stages: expected an array");
    for (std::size_t i = 0; i < s->size(); ++i) {
      c.stages.push_back(stage_config_from_json((*s)[i], "stages[" + std::to_string(i) + "]"));
    }
  }
  if (const json* s = r.object("scenario")) c.scenario = scenario_from_json(*s, "scenario");
  if (const json* s = r.object("sweep")) c.sweep = sweep_from_json(*s, "sweep");
  r.finish();
  validate(c);
  return c;
}

void validate(const RunConfig& c) {
  regdrop::validate(c.model);
  apply_strategy(c.model.strategy, c.model);
  const DataConfig& d = c.data.task;
  if (d.grid < 2) throw ConfigError("data.grid: need at least a 2x2 grid");
  if (d.colors < 2) throw ConfigError("data.colors: need at least 2 colors");
  if (c.model.grid != d.grid) {
    throw ConfigError("model.grid: " + std::to_string(c.model.grid) + " does not match data.grid " +
                      std::to_string(d.grid));
  }
  if (c.model.patch_dim != d.patch_dim) {
    throw ConfigError("model.patch_dim: " + std::to_string(c.model.patch_dim) + " does not match data.patch_dim " +
                      std::to_string(d.patch_dim));
  }
  if (c.model.vocab_size < c.vocab().size()) {
    throw ConfigError("model.vocab_size: the task needs at least " + std::to_string(c.vocab().size()) + " tokens");
  }
  if (c.data.train_count == 0) throw ConfigError("data.train_count: must be positive");
  if (c.data.eval_count == 0) throw ConfigError("data.eval_count: must be positive");
  if (c.output_dir.empty()) throw ConfigError("config.output_dir: must not be empty");
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace regdrop::cli

#include "regdrop/config.hpp"

#include "regdrop/errors.hpp"
#include "regdrop/json_fields.hpp"

namespace regdrop {

using nlohmann::json;

std::string to_string(StrategyTag tag) {
  switch (tag) {
    case StrategyTag::baseline:
      return "baseline";
    case StrategyTag::victor:
      return "victor";
    case StrategyTag::fastv:
      return "fastv";
    case StrategyTag::resampler:
      return "resampler";
    case StrategyTag::registers_no_drop:
      return "registers_no_drop";
    case StrategyTag::tail_retention:
      return "tail_retention";
  }
  return "baseline";
}

std::string to_string(RegisterInit mode) {
  switch (mode) {
    case RegisterInit::learnable:
      return "learnable";
    case RegisterInit::pooled_feature:
      return "pooled_feature";
    case RegisterInit::zeros:
      return "zeros";
    case RegisterInit::word_embedding:
      return "word_embedding";
  }
  return "learnable";
}

std::string to_string(SubselectMode mode) {
  switch (mode) {
    case SubselectMode::none:
      return "none";
    case SubselectMode::head:
      return "head";
    case SubselectMode::tail:
      return "tail";
  }
  return "none";
}

StrategyTag strategy_tag_from_string(const std::string& name) {
  for (auto tag : {StrategyTag::baseline, StrategyTag::victor, StrategyTag::fastv, StrategyTag::resampler,
                   StrategyTag::registers_no_drop, StrategyTag::tail_retention}) {
    if (to_string(tag) == name) return tag;
  }
  throw ConfigError("unknown strategy tag '" + name +
                    "' (expected baseline, victor, fastv, resampler, registers_no_drop or tail_retention)");
}

RegisterInit register_init_from_string(const std::string& name) {
  for (auto mode : {RegisterInit::learnable, RegisterInit::pooled_feature, RegisterInit::zeros,
                    RegisterInit::word_embedding}) {
    if (to_string(mode) == name) return mode;
  }
  throw ConfigError("unknown register init mode '" + name + "'");
}

SubselectMode subselect_mode_from_string(const std::string& name) {
  for (auto mode : {SubselectMode::none, SubselectMode::head, SubselectMode::tail}) {
    if (to_string(mode) == name) return mode;
  }
  throw ConfigError("unknown subselect mode '" + name + "'");
}


json to_json(const StrategyConfig& c) {
  return json{{"tag", to_string(c.tag)},
              {"tokens", c.tokens},
              {"drop_layer", c.drop_layer},
              {"register_init", to_string(c.register_init)},
              {"subselect", to_string(c.subselect)},
              {"subselect_count", c.subselect_count},
              {"resampler_blocks", c.resampler_blocks}};
}

json to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers},
              {"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},
              {"vocab_size", c.vocab_size},
              {"grid", c.grid},
              {"patch_dim", c.patch_dim},
              {"d_vision", c.d_vision},
              {"image_token_id", c.image_token_id},
              {"rope_base", c.rope_base},
              {"norm_eps", c.norm_eps},
              {"attention_backend", to_string(c.attention_backend)},
              {"renumber_positions_after_drop", c.renumber_positions_after_drop},
              {"seed", c.seed},
              {"strategy", to_json(c.strategy)}};
}

StrategyConfig strategy_config_from_json(const json& j, const std::string& path) {
  StrategyConfig c;
  FieldReader r(j, path);
  r.read_enum("tag", c.tag, strategy_tag_from_string);
  r.read_size("tokens", c.tokens);
  r.read_size("drop_layer", c.drop_layer);
  r.read_enum("register_init", c.register_init, register_init_from_string);
  r.read_enum("subselect", c.subselect, subselect_mode_from_string);
  r.read_size("subselect_count", c.subselect_count);
  r.read_size("resampler_blocks", c.resampler_blocks);
  r.finish();
  return c;
}

ModelConfig model_config_from_json(const json& j, const std::string& path) {
  ModelConfig c;
  FieldReader r(j, path);
  r.read_size("n_layers", c.n_layers);
  r.read_size("d_model", c.d_model);
  r.read_size("n_heads", c.n_heads);
  r.read_size("d_ff", c.d_ff);
  r.read_size("vocab_size", c.vocab_size);
  r.read_size("grid", c.grid);
  r.read_size("patch_dim", c.patch_dim);
  r.read_size("d_vision", c.d_vision);
  r.read("image_token_id", c.image_token_id);
  r.read("rope_base", c.rope_base);
  r.read("norm_eps", c.norm_eps);
  r.read_enum("attention_backend", c.attention_backend, attention_backend_from_string);
  r.read("renumber_positions_after_drop", c.renumber_positions_after_drop);
  r.read("seed", c.seed);
  if (const json* s = r.object("strategy")) c.strategy = strategy_config_from_json(*s, path + ".strategy");
  r.finish();
  return c;
}

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("model." + field + ": " + why); };
  if (c.n_layers == 0) fail("n_layers", "must be positive");
  if (c.d_model == 0) fail("d_model", "must be positive");
  if (c.n_heads == 0 || c.d_model % c.n_heads != 0) fail("n_heads", "must divide d_model");
  if (c.head_dim() % 2 != 0) fail("n_heads", "head dimension d_model/n_heads must be even for rotary positions");
  if (c.d_ff == 0) fail("d_ff", "must be positive");
  if (c.vocab_size == 0) fail("vocab_size", "must be positive");
  if (c.grid == 0) fail("grid", "must be positive");
  if (c.patch_dim == 0) fail("patch_dim", "must be positive");
  if (c.d_vision == 0) fail("d_vision", "must be positive");
  if (c.image_token_id < 0 || static_cast<std::size_t>(c.image_token_id) >= c.vocab_size) {
    fail("image_token_id", "outside the vocabulary");
  }
  if (!(c.norm_eps > 0.0)) fail("norm_eps", "must be positive");
  if (!(c.rope_base > 1.0)) fail("rope_base", "must exceed 1");
  if (c.strategy.drop_layer > c.n_layers) {
    fail("strategy.drop_layer", "drop layer " + std::to_string(c.strategy.drop_layer) + " exceeds n_layers " +
                                    std::to_string(c.n_layers));
  }
}

}  // namespace regdrop

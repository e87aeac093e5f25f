#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "regdrop/transformer.hpp"

namespace regdrop {

// Closed set of token-reduction mechanisms. The lowercase names returned by
// to_string are the configuration and CLI tags.
enum class StrategyTag { baseline, victor, fastv, resampler, registers_no_drop, tail_retention };

enum class RegisterInit { learnable, pooled_feature, zeros, word_embedding };

enum class SubselectMode { none, head, tail };

std::string to_string(StrategyTag tag);
std::string to_string(RegisterInit mode);
std::string to_string(SubselectMode mode);
StrategyTag strategy_tag_from_string(const std::string& name);
RegisterInit register_init_from_string(const std::string& name);
SubselectMode subselect_mode_from_string(const std::string& name);

struct StrategyConfig {
  StrategyTag tag = StrategyTag::victor;
  // Final visual-token budget M: registers (victor, registers_no_drop),
  // retained tokens (fastv, tail_retention) or queries (resampler).
  std::size_t tokens = 8;
  // Layer index k at which visual tokens leave the sequence.
  std::size_t drop_layer = 3;
  RegisterInit register_init = RegisterInit::learnable;
  SubselectMode subselect = SubselectMode::none;
  std::size_t subselect_count = 0;
  std::size_t resampler_blocks = 2;

  bool operator==(const StrategyConfig&) const = default;
};

struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 32;
  std::size_t grid = 8;          // image is grid × grid patches
  std::size_t patch_dim = 16;
  std::size_t d_vision = 64;
  int image_token_id = 1;        // token whose embedding seeds word_embedding registers
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
  AttentionBackend attention_backend = AttentionBackend::automatic;
  // Ablation: renumber surviving positions 0.. after the drop instead of keeping original ids.
  bool renumber_positions_after_drop = false;
  std::uint64_t seed = 1;
  StrategyConfig strategy;

  std::size_t visual_tokens() const { return grid * grid; }
  std::size_t head_dim() const { return d_model / n_heads; }

  bool operator==(const ModelConfig&) const = default;
};

// Throws ConfigError naming the offending field.
void validate(const ModelConfig& config);

// JSON mapping. Parsing rejects unknown keys and reports the key path.
nlohmann::json to_json(const StrategyConfig& config);
nlohmann::json to_json(const ModelConfig& config);
StrategyConfig strategy_config_from_json(const nlohmann::json& j, const std::string& path = "strategy");
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");

}  // namespace regdrop

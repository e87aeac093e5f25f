#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "regdrop/config.hpp"
#include "regdrop/strategies.hpp"
#include "regdrop/tensor.hpp"
#include "regdrop/transformer.hpp"

namespace regdrop {

// Prefill cost of one decoder layer over n tokens: 4nd² + 2n²d + 2n·d·d_ff.
std::uint64_t layer_flops(std::uint64_t n_tokens, std::uint64_t d_model, std::uint64_t d_ff);

// Same convention for one resampler block: M queries over N visual keys.
std::uint64_t resampler_block_flops(std::uint64_t n_queries, std::uint64_t n_visual, std::uint64_t d_model,
                                    std::uint64_t d_ff);

struct FlopsReport {
  std::string strategy;
  std::vector<std::size_t> tokens_per_layer;
  std::vector<std::uint64_t> per_layer;
  std::uint64_t added = 0;           // resampler blocks
  std::uint64_t total = 0;           // sum(per_layer) + added
  std::uint64_t baseline_total = 0;  // N+L tokens in every layer
  double ratio = 1.0;                // total / baseline_total
};

// Sequence length entering each language layer for a prompt of `n_text` tokens.
std::vector<std::size_t> token_schedule(const ModelConfig& config, std::size_t n_text);

FlopsReport model_flops(const ModelConfig& config, std::size_t n_text);

nlohmann::json to_json(const FlopsReport& report);

struct SimilarityStats {
  std::size_t rows = 0;
  std::vector<double> values;         // upper triangle, row-major (i < j)
  std::vector<std::size_t> histogram; // 50 bins over [-1, 1]
  double mean = 0.0;
  double fraction_above_0_8 = 0.0;
};

inline constexpr std::size_t kSimilarityBins = 50;

SimilarityStats cosine_similarity_stats(const Tensor& tokens);

nlohmann::json to_json(const SimilarityStats& stats, bool include_values = false);

struct RegisterAttentionMap {
  std::vector<std::size_t> layers;
  std::vector<std::vector<double>> maps;  // per layer, registers × visual, row-major
  std::vector<double> visual_mass;        // per layer, mean over registers of the row sum
  std::size_t registers = 0;
  std::size_t visual = 0;

  double at(std::size_t layer_slot, std::size_t reg, std::size_t vis) const {
    return maps[layer_slot][reg * visual + vis];
  }
};

// Register-query rows restricted to visual-key columns, averaged over heads,
// for each of `layers` (every record must be present and undropped).
RegisterAttentionMap register_attention_map(std::span<const AttentionRecord> records, const TokenLayout& layout,
                                            std::span<const std::size_t> layers);

// Row-major g × g reshape of an N = g² row.
std::vector<std::vector<double>> attention_to_grid(std::span<const double> row, std::size_t grid);

nlohmann::json to_json(const RegisterAttentionMap& map);

// g lines of g comma-separated values.
std::string grid_to_csv(const std::vector<std::vector<double>>& grid);

}  // namespace regdrop

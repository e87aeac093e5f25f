#include "regdrop/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "regdrop/errors.hpp"

namespace regdrop {

using nlohmann::json;

std::uint64_t layer_flops(std::uint64_t n, std::uint64_t d, std::uint64_t m) {
  return 4 * n * d * d + 2 * n * n * d + 2 * n * d * m;
}

std::uint64_t resampler_block_flops(std::uint64_t q, std::uint64_t n, std::uint64_t d, std::uint64_t m) {
  // query/output projections on q rows, key/value projections on n rows,
  // scores and weighted sum q×n, two-matrix FFN on q rows
  return 2 * q * d * d + 2 * n * d * d + 2 * q * n * d + 2 * q * d * m;
}

std::vector<std::size_t> token_schedule(const ModelConfig& config, std::size_t n_text) {
  const ForwardPlan plan = apply_strategy(config.strategy, config);
  const std::size_t n_visual = plan.use_resampler ? plan.keep_visual : config.visual_tokens();
  const std::size_t before = n_visual + plan.registers + n_text;
  std::size_t after = before;
  if (plan.drop_layer) {
    const std::size_t kept = plan.drop == DropRule::all_visual ? 0 : plan.keep_visual;
    after = kept + plan.registers + n_text;
  }
  std::vector<std::size_t> schedule(config.n_layers);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    schedule[i] = plan.drop_layer && i >= *plan.drop_layer ? after : before;
  }
  return schedule;
}

FlopsReport model_flops(const ModelConfig& config, std::size_t n_text) {
  FlopsReport r;
  r.strategy = to_string(config.strategy.tag);
  r.tokens_per_layer = token_schedule(config, n_text);
  for (std::size_t n : r.tokens_per_layer) {
    r.per_layer.push_back(layer_flops(n, config.d_model, config.d_ff));
  }
  if (config.strategy.tag == StrategyTag::resampler) {
    r.added = config.strategy.resampler_blocks *
              resampler_block_flops(config.strategy.tokens, config.visual_tokens(), config.d_model, config.d_ff);
  }
  r.total = std::accumulate(r.per_layer.begin(), r.per_layer.end(), std::uint64_t{0}) + r.added;
  r.baseline_total = config.n_layers * layer_flops(config.visual_tokens() + n_text, config.d_model, config.d_ff);
  r.ratio = r.baseline_total ? static_cast<double>(r.total) / static_cast<double>(r.baseline_total) : 1.0;
  return r;
}

json to_json(const FlopsReport& r) {
  return json{{"strategy", r.strategy},       {"tokens_per_layer", r.tokens_per_layer},
              {"per_layer", r.per_layer},     {"added", r.added},
              {"total", r.total},             {"baseline_total", r.baseline_total},
              {"ratio", r.ratio}};
}

SimilarityStats cosine_similarity_stats(const Tensor& tokens) {
  if (tokens.rank() != 2) throw ShapeError("cosine_similarity_stats: expected a matrix");
  const std::size_t n = tokens.rows();
  const std::size_t d = tokens.cols();
  if (n < 2) throw DataError("cosine_similarity_stats: need at least two tokens");
  const auto x = tokens.data();

  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += x[i * d + c] * x[i * d + c];
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) throw DataError("cosine_similarity_stats: row " + std::to_string(i) + " has zero norm");
  }

  SimilarityStats st;
  st.rows = n;
  st.histogram.assign(kSimilarityBins, 0);
  st.values.reserve(n * (n - 1) / 2);
  std::size_t above = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += x[i * d + c] * x[j * d + c];
      const double v = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      st.values.push_back(v);
      total += v;
      if (v > 0.8) ++above;
      const auto bin = static_cast<std::size_t>((v + 1.0) / 2.0 * static_cast<double>(kSimilarityBins));
      ++st.histogram[std::min(bin, kSimilarityBins - 1)];
    }
  }
  const double pairs = static_cast<double>(st.values.size());
  st.mean = total / pairs;
  st.fraction_above_0_8 = static_cast<double>(above) / pairs;
  return st;
}

json to_json(const SimilarityStats& s, bool include_values) {
  json j{{"rows", s.rows},
         {"pairs", s.values.size()},
         {"mean", s.mean},
         {"fraction_above_0_8", s.fraction_above_0_8},
         {"histogram", s.histogram},
         {"bin_edges", json{{"low", -1.0}, {"high", 1.0}, {"bins", kSimilarityBins}}}};
  if (include_values) j["values"] = s.values;
  return j;
}

RegisterAttentionMap register_attention_map(std::span<const AttentionRecord> records, const TokenLayout& layout,
                                            std::span<const std::size_t> layers) {
  if (layout.dropped) throw ContractError("register_attention_map: layout must describe the undropped sequence");
  if (layout.registers == 0) throw ContractError("register_attention_map: the sequence has no registers");
  RegisterAttentionMap m;
  m.registers = layout.registers;
  m.visual = layout.visual;
  for (std::size_t layer : layers) {
    const auto it = std::find_if(records.begin(), records.end(),
                                 [layer](const AttentionRecord& r) { return r.layer == layer; });
    if (it == records.end()) {
      throw ContractError("register_attention_map: no attention record for layer " + std::to_string(layer));
    }
    const AttentionRecord& rec = *it;
    if (rec.queries != layout.total() || rec.keys < layout.total()) {
      throw ContractError("register_attention_map: record for layer " + std::to_string(layer) +
                          " does not cover the undropped sequence");
    }
    std::vector<double> map(m.registers * m.visual, 0.0);
    double mass = 0.0;
    for (std::size_t r = 0; r < m.registers; ++r) {
      const std::size_t q = layout.register_begin() + r;
      double row_mass = 0.0;
      for (std::size_t v = 0; v < m.visual; ++v) {
        double s = 0.0;
        for (std::size_t h = 0; h < rec.heads; ++h) s += rec.prob(h, q, v);
        map[r * m.visual + v] = s / static_cast<double>(rec.heads);
        row_mass += map[r * m.visual + v];
      }
      mass += row_mass;
    }
    m.layers.push_back(layer);
    m.maps.push_back(std::move(map));
    m.visual_mass.push_back(mass / static_cast<double>(m.registers));
  }
  return m;
}

std::vector<std::vector<double>> attention_to_grid(std::span<const double> row, std::size_t grid) {
  if (grid == 0 || grid * grid != row.size()) {
    throw ContractError("attention_to_grid: row of length " + std::to_string(row.size()) + " is not a " +
                        std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  }
  std::vector<std::vector<double>> out(grid, std::vector<double>(grid));
  for (std::size_t i = 0; i < row.size(); ++i) out[i / grid][i % grid] = row[i];
  return out;
}

json to_json(const RegisterAttentionMap& m) {
  json layers = json::array();
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.registers; ++r) {
      rows.push_back(std::vector<double>(m.maps[i].begin() + static_cast<std::ptrdiff_t>(r * m.visual),
                                         m.maps[i].begin() + static_cast<std::ptrdiff_t>((r + 1) * m.visual)));
    }
    layers.push_back(json{{"layer", m.layers[i]}, {"visual_mass", m.visual_mass[i]}, {"map", std::move(rows)}});
  }
  return json{{"registers", m.registers}, {"visual", m.visual}, {"layers", std::move(layers)}};
}

std::string grid_to_csv(const std::vector<std::vector<double>>& grid) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& row : grid) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
    out << '\n';
  }
  return out.str();
}

}  // namespace regdrop

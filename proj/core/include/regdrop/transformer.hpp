#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "regdrop/tensor.hpp"

namespace regdrop {

using PositionIds = std::vector<std::int64_t>;

// Rotates adjacent feature pairs (2i, 2i+1) of every head by pos * base^(-2i/head_dim).
// x is [len × (heads·head_dim)]; positions need not be contiguous.
Tensor apply_rope(const Tensor& x, std::span<const std::int64_t> position_ids, std::size_t head_dim,
                  double base = 10000.0);

// Additive attention mask, queries × keys, row-major.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<double> values;

  bool allowed(std::size_t q, std::size_t k) const { return values[q * keys + k] == 0.0; }
};

// Query i (cache slot q_offset + i) may see keys with slot <= q_offset + i.
AttentionMask causal_mask(std::int64_t q_len, std::int64_t kv_len, std::int64_t q_offset);

// Post-softmax scores of one layer, heads × queries × keys.
struct AttentionRecord {
  std::size_t layer = 0;
  std::size_t heads = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<double> probs;
  PositionIds query_positions;
  PositionIds key_positions;

  double prob(std::size_t head, std::size_t query, std::size_t key) const {
    return probs[(head * queries + query) * keys + key];
  }
};

struct AttentionOutput {
  Tensor output;
  std::optional<AttentionRecord> record;
};

// Scaled dot-product attention built from primitive tensor ops. q is
// [Lq × d], k and v are [Lk × d], split into n_heads column blocks.
AttentionOutput attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                          std::size_t n_heads, bool capture);

// Single-node causal attention that skips masked blocks and never exposes
// scores. Requires k.rows() == q_offset + q.rows().
Tensor fused_causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                              std::size_t q_offset);

// eager: composite ops, scores can be captured.
// fused: fused_causal_attention, no score capture.
// automatic: fused unless scores are requested.
enum class AttentionBackend { automatic, eager, fused };

std::string to_string(AttentionBackend backend);
AttentionBackend attention_backend_from_string(const std::string& name);

struct LayerParams {
  Tensor wq, wk, wv, wo;           // d_model × d_model
  Tensor w_gate, w_up;             // d_model × d_ff
  Tensor w_down;                   // d_ff × d_model
  Tensor attn_norm, ffn_norm;      // d_model

  static LayerParams init(std::size_t d_model, std::size_t d_ff, std::size_t n_layers, Rng& rng);
  static LayerParams zeros(std::size_t d_model, std::size_t d_ff);

  std::vector<std::pair<std::string, Tensor>> named() const;
};

// Keys/values already rotated, plus the position id each slot was encoded at.
struct LayerCache {
  std::size_t width = 0;
  std::vector<double> keys;
  std::vector<double> values;
  PositionIds positions;

  std::size_t length() const { return positions.size(); }
};

struct LayerSettings {
  std::size_t n_heads = 4;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
};

struct LayerOutput {
  Tensor hidden;
  std::optional<AttentionRecord> record;
};

// Pre-norm block: h = x + Attn(norm(x)); out = h + FFN(norm(h)), FFN gated by SiLU.
// With a cache the new keys/values are appended and attention runs over the
// whole cache. `eager` selects the composite attention path; capture needs it.
LayerOutput decoder_layer(const Tensor& hidden, const LayerParams& params, std::span<const std::int64_t> position_ids,
                          LayerCache* cache, bool capture, bool eager, const LayerSettings& settings);

}  // namespace regdrop

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "regdrop/config.hpp"
#include "regdrop/tensor.hpp"
#include "regdrop/transformer.hpp"

namespace regdrop {

// Span bookkeeping for the [visual; registers; text] sequence.
//
// Before the drop the spans are visual=[0,N), registers=[N,N+M),
// text=[N+M,N+M+L). After the drop only `kept_visual` visual rows remain
// (zero for Victor) followed by registers and text.
struct TokenLayout {
  std::size_t visual = 0;
  std::size_t registers = 0;
  std::size_t text = 0;
  bool dropped = false;
  std::size_t kept_visual = 0;

  std::size_t visual_rows() const { return dropped ? kept_visual : visual; }
  std::size_t register_begin() const { return visual_rows(); }
  std::size_t text_begin() const { return visual_rows() + registers; }
  std::size_t total() const { return visual_rows() + registers + text; }

  bool operator==(const TokenLayout&) const = default;
};

struct RegisterBank {
  Tensor embeddings;  // M × d_model
  RegisterInit mode = RegisterInit::learnable;

  std::size_t count() const { return embeddings.defined() ? embeddings.rows() : 0; }
};

// How a configured strategy shapes the forward pass.
enum class DropRule { none, all_visual, keep_tail, attention_topk };

struct ForwardPlan {
  StrategyTag tag = StrategyTag::baseline;
  std::size_t registers = 0;          // register rows appended after the visual span
  bool use_resampler = false;         // visual span replaced by resampler outputs
  std::optional<std::size_t> drop_layer;
  DropRule drop = DropRule::none;
  std::size_t keep_visual = 0;        // retained visual rows for keep_tail / attention_topk
  bool force_capture = false;         // scores needed to decide what to keep
  SubselectMode subselect = SubselectMode::none;

  // Hidden length from the drop layer on (from the input when nothing drops).
  std::size_t final_length(std::size_t n_visual, std::size_t n_text) const;
};

// Validates the strategy against the model and returns its forward plan.
ForwardPlan apply_strategy(const StrategyConfig& strategy, const ModelConfig& model);

struct DropResult {
  Tensor hidden;
  TokenLayout layout;
  std::vector<std::size_t> kept_rows;  // indices into the pre-drop sequence
};

// Keeps the given visual rows (ascending) plus every register and text row.
DropResult drop_visual_rows(const Tensor& hidden, const TokenLayout& layout, std::vector<std::size_t> kept_visual);

// Removes the whole visual span: x = x[N:].
DropResult victor_drop(const Tensor& hidden, const TokenLayout& layout);

// Keeps only the last `keep` visual rows (no registers in this ablation).
DropResult tail_retention_drop(const Tensor& hidden, const TokenLayout& layout, std::size_t keep);

// Ranks visual token j by its attention received, averaged over heads and
// over every query row strictly after j (rows limited to `query_end` when
// given), keeps the top `keep` with ties to the lower index, and returns them
// in ascending order. `record` must come from the undropped sequence.
std::vector<std::size_t> fastv_select(const AttentionRecord* record, const TokenLayout& layout, std::size_t keep,
                                      std::optional<std::size_t> query_end = std::nullopt);

struct ResamplerBlock {
  Tensor query_norm, context_norm;   // d_model
  Tensor wq, wk, wv, wo;             // d_model × d_model
  Tensor ffn_norm;                   // d_model
  Tensor w_in;                       // d_model × d_ff
  Tensor w_out;                      // d_ff × d_model
};

struct ResamplerParams {
  Tensor queries;  // M × d_model
  std::vector<ResamplerBlock> blocks;

  static ResamplerParams init(std::size_t n_queries, std::size_t n_blocks, std::size_t d_model, std::size_t d_ff,
                              Rng& rng);
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::size_t parameter_count() const;
};

// Learned queries cross-attend to the visual tokens through every block;
// the result (M × d_model) stands in for x_V.
Tensor resample(const Tensor& visual, const ResamplerParams& params, std::size_t n_heads, double norm_eps);

// learnable: N(0, 0.02²) trainable rows; pooled_feature: mean of contiguous
// visual chunks; zeros: zero rows; word_embedding: every row copies word_vec.
RegisterBank init_registers(RegisterInit mode, std::size_t count, std::size_t d_model, const Tensor* visual,
                            const Tensor* word_vec, Rng* rng);

// Contiguous [begin, end) chunks used by pooled_feature; the last chunk
// absorbs the remainder when count does not divide n.
std::vector<std::pair<std::size_t, std::size_t>> pooling_chunks(std::size_t n, std::size_t count);

RegisterBank subselect_registers(const RegisterBank& bank, std::size_t count, SubselectMode mode);

}  // namespace regdrop

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "regdrop/config.hpp"
#include "regdrop/strategies.hpp"
#include "regdrop/tensor.hpp"
#include "regdrop/transformer.hpp"

namespace regdrop {

// g × g grid of patch feature vectors in row-major order, with the palette
// index each cell was drawn from.
struct SyntheticImage {
  std::size_t grid = 0;
  std::size_t patch_dim = 0;
  std::vector<double> patches;  // (grid·grid) × patch_dim
  std::vector<int> labels;      // grid·grid
};

enum class ParamGroup { vision, projector, language, registers, resampler };
std::string to_string(ParamGroup group);

struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

struct PromptInput {
  Tensor embeddings;     // [visual; registers; text] rows
  TokenLayout layout;
  Tensor visual_tokens;  // x_V after projection (and resampling)
};

struct ForwardOptions {
  // Record post-softmax scores for every layer (forces the eager path).
  bool capture = false;
  // Only the first `selection_text_len` text rows vote in fastv ranking.
  std::optional<std::size_t> selection_text_len;
  // Keep the hidden state that enters the drop layer (final state if none).
  bool keep_pre_drop_hidden = false;
};

struct ForwardResult {
  Tensor logits;                           // text rows × vocab
  std::vector<AttentionRecord> records;    // one per captured layer
  std::vector<std::size_t> layer_lengths;  // sequence length entering each layer
  TokenLayout layout;                      // layout after the last layer
  std::vector<std::size_t> kept_visual;    // visual indices surviving the drop
  PositionIds final_positions;
  Tensor pre_drop_hidden;
};

// [x_V; registers; text] concatenation with span bookkeeping.
PromptInput assemble_input(const Tensor& visual, const RegisterBank& registers, const Tensor& text_embeddings);

// LLaVA-style model: linear patch tower, two-layer projector, decoder-only
// language tower, plus whatever the configured strategy adds (registers or a
// resampler). Copies share parameter storage; use deep_copy for independence.
class VlmModel {
 public:
  explicit VlmModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const ForwardPlan& plan() const { return plan_; }

  // Same parameters, different strategy/runtime settings. The parameter set
  // implied by `config` must match this model's.
  VlmModel with_config(const ModelConfig& config) const;
  VlmModel deep_copy() const;

  // One token per patch: patch·W + b + learned position embedding.
  Tensor embed_image(const SyntheticImage& image) const;
  // Two-layer GELU MLP into the language width.
  Tensor project(const Tensor& features) const;
  Tensor embed_text(std::span<const int> ids) const;
  RegisterBank register_bank(const Tensor& visual_tokens) const;

  PromptInput build_input(const SyntheticImage& image, std::span<const int> text) const;

  // Runs the language tower over `embeddings` following the plan. With
  // `caches` (one per layer) keys and values are appended for later decoding.
  ForwardResult forward(const Tensor& embeddings, const TokenLayout& layout, const ForwardOptions& options = {},
                        std::vector<LayerCache>* caches = nullptr) const;

  // One new text token against populated caches; returns 1 × vocab logits.
  Tensor decode(int token, std::vector<LayerCache>& caches) const;

  std::vector<NamedParam> parameters() const;
  std::size_t parameter_count() const;

  // Direct access for tests and analysis.
  std::vector<LayerParams>& layers() { return layers_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  const Tensor& learnable_registers() const { return registers_; }
  const std::optional<ResamplerParams>& resampler() const { return resampler_; }
  const Tensor& token_embedding() const { return token_embedding_; }

  LayerSettings layer_settings() const;
  // Whether the eager attention path is used, given whether scores are wanted.
  bool uses_eager_attention(bool capture) const;

 private:
  Tensor logits_for(const Tensor& hidden_rows) const;

  ModelConfig config_;
  ForwardPlan plan_;
  Tensor patch_w_, patch_b_, vision_pos_;
  Tensor proj_w1_, proj_b1_, proj_w2_, proj_b2_;
  Tensor token_embedding_;
  std::vector<LayerParams> layers_;
  Tensor final_norm_, lm_head_;
  Tensor registers_;
  std::optional<ResamplerParams> resampler_;
};

struct ExtraParams {
  std::size_t extra = 0;
  std::size_t total = 0;
  double fraction = 0.0;
};

// Parameters the strategy adds on top of the plain model, and their share of
// the whole model, computed from the configuration alone.
ExtraParams count_extra_params(const ModelConfig& config);

}  // namespace regdrop

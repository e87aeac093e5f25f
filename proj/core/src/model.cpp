#include "regdrop/model.hpp"

#include <cmath>
#include <numeric>

#include "regdrop/errors.hpp"

namespace regdrop {

std::string to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::vision:
      return "vision";
    case ParamGroup::projector:
      return "projector";
    case ParamGroup::language:
      return "language";
    case ParamGroup::registers:
      return "registers";
    case ParamGroup::resampler:
      return "resampler";
  }
  return "language";
}

namespace {

bool has_learnable_registers(const ModelConfig& c) {
  const auto tag = c.strategy.tag;
  return (tag == StrategyTag::victor || tag == StrategyTag::registers_no_drop) &&
         c.strategy.register_init == RegisterInit::learnable;
}

Tensor randn_param(Shape shape, double stddev, Rng& rng) { return Tensor::randn(std::move(shape), stddev, rng, true); }

}  // namespace

PromptInput assemble_input(const Tensor& visual, const RegisterBank& registers, const Tensor& text_embeddings) {
  if (!text_embeddings.defined() || text_embeddings.rows() == 0) throw ContractError("assemble_input: empty text");
  const std::size_t width = text_embeddings.cols();
  std::vector<Tensor> parts;
  PromptInput in;
  if (visual.defined() && visual.rows() > 0) {
    if (visual.cols() != width) throw ShapeError("assemble_input: visual width differs from text width");
    parts.push_back(visual);
    in.layout.visual = visual.rows();
  }
  if (registers.count() > 0) {
    if (registers.embeddings.cols() != width) throw ShapeError("assemble_input: register width differs from text width");
    parts.push_back(registers.embeddings);
    in.layout.registers = registers.count();
  }
  parts.push_back(text_embeddings);
  in.layout.text = text_embeddings.rows();
  in.embeddings = parts.size() == 1 ? text_embeddings : concat_rows(parts);
  in.visual_tokens = visual;
  return in;
}

VlmModel::VlmModel(ModelConfig config) : config_(std::move(config)) {
  validate(config_);
  plan_ = apply_strategy(config_.strategy, config_);
  const auto& c = config_;
  Rng rng(c.seed);
  const std::size_t d = c.d_model;

  patch_w_ = randn_param({c.patch_dim, c.d_vision}, 1.0 / std::sqrt(static_cast<double>(c.patch_dim)), rng);
  patch_b_ = Tensor::zeros({c.d_vision}, true);
  vision_pos_ = randn_param({c.visual_tokens(), c.d_vision}, 1.0, rng);

  proj_w1_ = randn_param({c.d_vision, d}, 1.0 / std::sqrt(static_cast<double>(c.d_vision)), rng);
  proj_b1_ = Tensor::zeros({d}, true);
  proj_w2_ = randn_param({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  proj_b2_ = Tensor::zeros({d}, true);

  token_embedding_ = randn_param({c.vocab_size, d}, 1.0, rng);
  for (std::size_t i = 0; i < c.n_layers; ++i) layers_.push_back(LayerParams::init(d, c.d_ff, c.n_layers, rng));
  final_norm_ = Tensor::full({d}, 1.0, true);
  lm_head_ = randn_param({d, c.vocab_size}, 1.0 / std::sqrt(static_cast<double>(d)), rng);

  if (has_learnable_registers(c)) {
    registers_ = init_registers(RegisterInit::learnable, c.strategy.tokens, d, nullptr, nullptr, &rng).embeddings;
  }
  if (plan_.use_resampler) {
    resampler_ = ResamplerParams::init(c.strategy.tokens, c.strategy.resampler_blocks, d, c.d_ff, rng);
  }
}

VlmModel VlmModel::with_config(const ModelConfig& config) const {
  validate(config);
  const bool same_structure = config.n_layers == config_.n_layers && config.d_model == config_.d_model &&
                              config.d_ff == config_.d_ff && config.vocab_size == config_.vocab_size &&
                              config.grid == config_.grid && config.patch_dim == config_.patch_dim &&
                              config.d_vision == config_.d_vision;
  if (!same_structure) throw ConfigError("with_config: architecture differs from the trained model");
  if (has_learnable_registers(config) != registers_.defined() ||
      (registers_.defined() && registers_.rows() != config.strategy.tokens)) {
    throw ConfigError("with_config: register bank does not match the trained model");
  }
  const bool wants_resampler = config.strategy.tag == StrategyTag::resampler;
  if (wants_resampler != resampler_.has_value() ||
      (resampler_ && (resampler_->queries.rows() != config.strategy.tokens ||
                      resampler_->blocks.size() != config.strategy.resampler_blocks))) {
    throw ConfigError("with_config: resampler does not match the trained model");
  }
  VlmModel copy = *this;
  copy.config_ = config;
  copy.plan_ = apply_strategy(config.strategy, config);
  return copy;
}

VlmModel VlmModel::deep_copy() const {
  VlmModel copy(config_);
  auto dst = copy.parameters();
  const auto src = parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.mutable_data().begin());
  }
  return copy;
}

LayerSettings VlmModel::layer_settings() const {
  return LayerSettings{config_.n_heads, config_.rope_base, config_.norm_eps};
}

bool VlmModel::uses_eager_attention(bool capture) const {
  const bool need_scores = capture || plan_.force_capture;
  if (need_scores && config_.attention_backend == AttentionBackend::fused) {
    throw StrategyError("attention scores were requested but the model is configured with the fused backend");
  }
  return need_scores || config_.attention_backend == AttentionBackend::eager;
}

Tensor VlmModel::embed_image(const SyntheticImage& image) const {
  const std::size_t n = config_.visual_tokens();
  if (image.grid != config_.grid || image.patch_dim != config_.patch_dim || image.patches.size() != n * image.patch_dim) {
    throw ShapeError("embed_image: expected a " + std::to_string(config_.grid) + "x" + std::to_string(config_.grid) +
                     " grid of " + std::to_string(config_.patch_dim) + "-d patches");
  }
  const Tensor patches = Tensor::from({n, config_.patch_dim}, image.patches);
  return add(add_bias(matmul(patches, patch_w_), patch_b_), vision_pos_);
}

Tensor VlmModel::project(const Tensor& features) const {
  if (features.rank() != 2 || features.cols() != config_.d_vision) {
    throw ShapeError("project: expected features of width " + std::to_string(config_.d_vision));
  }
  const Tensor hidden = gelu(add_bias(matmul(features, proj_w1_), proj_b1_));
  return add_bias(matmul(hidden, proj_w2_), proj_b2_);
}

Tensor VlmModel::embed_text(std::span<const int> ids) const { return embedding(token_embedding_, ids); }

RegisterBank VlmModel::register_bank(const Tensor& visual_tokens) const {
  const auto& s = config_.strategy;
  if (plan_.registers == 0 && s.subselect == SubselectMode::none) return RegisterBank{};
  if (s.tag != StrategyTag::victor && s.tag != StrategyTag::registers_no_drop) return RegisterBank{};
  RegisterBank bank;
  switch (s.register_init) {
    case RegisterInit::learnable:
      bank = RegisterBank{registers_, RegisterInit::learnable};
      break;
    case RegisterInit::pooled_feature:
    case RegisterInit::zeros:
      bank = init_registers(s.register_init, s.tokens, config_.d_model, &visual_tokens, nullptr, nullptr);
      break;
    case RegisterInit::word_embedding: {
      const std::vector<std::size_t> row{static_cast<std::size_t>(config_.image_token_id)};
      const Tensor word = gather_rows(token_embedding_, row);
      bank = init_registers(s.register_init, s.tokens, config_.d_model, nullptr, &word, nullptr);
      break;
    }
  }
  if (s.subselect != SubselectMode::none) bank = subselect_registers(bank, s.subselect_count, s.subselect);
  return bank;
}

PromptInput VlmModel::build_input(const SyntheticImage& image, std::span<const int> text) const {
  Tensor visual = project(embed_image(image));
  if (plan_.use_resampler) visual = resample(visual, *resampler_, config_.n_heads, config_.norm_eps);
  const RegisterBank bank = register_bank(visual);
  return assemble_input(visual, bank, embed_text(text));
}

ForwardResult VlmModel::forward(const Tensor& embeddings, const TokenLayout& layout, const ForwardOptions& options,
                                std::vector<LayerCache>* caches) const {
  if (embeddings.rank() != 2 || embeddings.cols() != config_.d_model) {
    throw ShapeError("forward: embeddings must be [len x " + std::to_string(config_.d_model) + "]");
  }
  if (embeddings.rows() != layout.total()) throw ShapeError("forward: embeddings do not match the layout");
  if (layout.dropped) throw ContractError("forward: layout is already dropped");
  if (config_.strategy.drop_layer > config_.n_layers) throw ConfigError("forward: drop layer exceeds layer count");
  if (caches) {
    if (!caches->empty() && caches->size() != config_.n_layers) throw CacheError("forward: cache has wrong layer count");
    caches->resize(config_.n_layers);
  }
  const bool eager = uses_eager_attention(options.capture);
  const LayerSettings settings = layer_settings();

  ForwardResult result;
  result.layout = layout;
  Tensor hidden = embeddings;
  PositionIds positions(layout.total());
  std::iota(positions.begin(), positions.end(), 0);

  const AttentionRecord* last_record = nullptr;
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    if (plan_.drop_layer && *plan_.drop_layer == i) {
      if (options.keep_pre_drop_hidden) result.pre_drop_hidden = hidden;
      std::vector<std::size_t> kept;
      if (plan_.drop == DropRule::keep_tail) {
        for (std::size_t j = layout.visual - plan_.keep_visual; j < layout.visual; ++j) kept.push_back(j);
      } else if (plan_.drop == DropRule::attention_topk) {
        std::optional<std::size_t> query_end;
        if (options.selection_text_len) query_end = layout.visual + layout.registers + *options.selection_text_len;
        kept = fastv_select(last_record, result.layout, plan_.keep_visual, query_end);
      }
      DropResult dropped = drop_visual_rows(hidden, result.layout, std::move(kept));
      hidden = std::move(dropped.hidden);
      result.layout = dropped.layout;
      result.kept_visual.assign(dropped.kept_rows.begin(),
                                dropped.kept_rows.begin() + static_cast<std::ptrdiff_t>(dropped.layout.kept_visual));
      PositionIds surviving(dropped.kept_rows.size());
      for (std::size_t r = 0; r < surviving.size(); ++r) {
        surviving[r] = config_.renumber_positions_after_drop ? static_cast<std::int64_t>(r) : positions[dropped.kept_rows[r]];
      }
      positions = std::move(surviving);
    }
    result.layer_lengths.push_back(hidden.rows());
    const bool capture_here =
        options.capture || (plan_.force_capture && plan_.drop_layer && *plan_.drop_layer == i + 1);
    LayerOutput out =
        decoder_layer(hidden, layers_[i], positions, caches ? &(*caches)[i] : nullptr, capture_here, eager, settings);
    hidden = std::move(out.hidden);
    if (out.record) {
      out.record->layer = i;
      result.records.push_back(std::move(*out.record));
      last_record = &result.records.back();
    }
  }
  if (options.keep_pre_drop_hidden && !result.pre_drop_hidden.defined()) result.pre_drop_hidden = hidden;

  const std::size_t total = hidden.rows();
  result.logits = logits_for(slice_rows(hidden, total - result.layout.text, total));
  result.final_positions = std::move(positions);
  return result;
}

Tensor VlmModel::decode(int token, std::vector<LayerCache>& caches) const {
  if (caches.size() != config_.n_layers) {
    throw CacheError("decode: cache holds " + std::to_string(caches.size()) + " layers, model has " +
                     std::to_string(config_.n_layers));
  }
  const bool eager = uses_eager_attention(false);
  const LayerSettings settings = layer_settings();
  const int ids[1] = {token};
  Tensor hidden = embed_text(ids);
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    auto& cache = caches[i];
    if (cache.length() == 0) throw CacheError("decode: layer " + std::to_string(i) + " cache is empty; run prefill first");
    if (cache.width != config_.d_model) throw CacheError("decode: cache width does not match d_model");
    const PositionIds pos{cache.positions.back() + 1};
    hidden = decoder_layer(hidden, layers_[i], pos, &cache, false, eager, settings).hidden;
  }
  return logits_for(hidden);
}

Tensor VlmModel::logits_for(const Tensor& hidden_rows) const {
  return matmul(rms_norm(hidden_rows, final_norm_, config_.norm_eps), lm_head_);
}

std::vector<NamedParam> VlmModel::parameters() const {
  std::vector<NamedParam> out{
      {"vision.patch_w", ParamGroup::vision, patch_w_},      {"vision.patch_b", ParamGroup::vision, patch_b_},
      {"vision.pos_embed", ParamGroup::vision, vision_pos_}, {"projector.w1", ParamGroup::projector, proj_w1_},
      {"projector.b1", ParamGroup::projector, proj_b1_},     {"projector.w2", ParamGroup::projector, proj_w2_},
      {"projector.b2", ParamGroup::projector, proj_b2_},     {"language.token_embedding", ParamGroup::language, token_embedding_},
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& [name, t] : layers_[i].named()) {
      out.push_back({"language.layers." + std::to_string(i) + "." + name, ParamGroup::language, t});
    }
  }
  out.push_back({"language.final_norm", ParamGroup::language, final_norm_});
  out.push_back({"language.lm_head", ParamGroup::language, lm_head_});
  if (registers_.defined()) out.push_back({"registers.embeddings", ParamGroup::registers, registers_});
  if (resampler_) {
    for (auto& [name, t] : resampler_->named()) out.push_back({"resampler." + name, ParamGroup::resampler, t});
  }
  return out;
}

std::size_t VlmModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

ExtraParams count_extra_params(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t vision = c.patch_dim * c.d_vision + c.d_vision + c.visual_tokens() * c.d_vision;
  const std::size_t projector = c.d_vision * d + d + d * d + d;
  const std::size_t per_layer = 4 * d * d + 3 * d * c.d_ff + 2 * d;
  const std::size_t language = c.vocab_size * d + c.n_layers * per_layer + d + d * c.vocab_size;

  ExtraParams p;
  const auto& s = c.strategy;
  if (has_learnable_registers(c)) {
    p.extra = s.tokens * d;
  } else if (s.tag == StrategyTag::resampler) {
    const std::size_t per_block = 3 * d + 4 * d * d + 2 * d * c.d_ff;
    p.extra = s.tokens * d + s.resampler_blocks * per_block;
  }
  p.total = vision + projector + language + p.extra;
  p.fraction = p.total ? static_cast<double>(p.extra) / static_cast<double>(p.total) : 0.0;
  return p;
}

}  // namespace regdrop

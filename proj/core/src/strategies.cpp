#include "regdrop/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "regdrop/errors.hpp"

namespace regdrop {

std::size_t ForwardPlan::final_length(std::size_t n_visual, std::size_t n_text) const {
  const std::size_t visual = use_resampler ? keep_visual : n_visual;
  if (!drop_layer) return visual + registers + n_text;
  switch (drop) {
    case DropRule::none:
      return visual + registers + n_text;
    case DropRule::all_visual:
      return registers + n_text;
    case DropRule::keep_tail:
    case DropRule::attention_topk:
      return keep_visual + registers + n_text;
  }
  return visual + registers + n_text;
}

ForwardPlan apply_strategy(const StrategyConfig& s, const ModelConfig& model) {
  const std::size_t n = model.n_layers;
  const std::size_t n_visual = model.visual_tokens();
  if (s.drop_layer > n) {
    throw ConfigError("strategy.drop_layer: " + std::to_string(s.drop_layer) + " exceeds the layer count " +
                      std::to_string(n));
  }
  const bool has_registers = s.tag == StrategyTag::victor || s.tag == StrategyTag::registers_no_drop;
  if (s.subselect != SubselectMode::none && !has_registers) {
    throw ConfigError("strategy.subselect: only register strategies can subselect registers");
  }
  if (s.subselect != SubselectMode::none && s.subselect_count > s.tokens) {
    throw ConfigError("strategy.subselect_count: " + std::to_string(s.subselect_count) + " exceeds the " +
                      std::to_string(s.tokens) + " trained registers");
  }
  if (has_registers && s.register_init == RegisterInit::pooled_feature && s.tokens > n_visual) {
    throw ConfigError("strategy.tokens: pooled_feature needs at most one register per visual token");
  }

  ForwardPlan plan;
  plan.tag = s.tag;
  plan.subselect = has_registers ? s.subselect : SubselectMode::none;
  const std::optional<std::size_t> drop_at =
      s.drop_layer < n ? std::optional<std::size_t>(s.drop_layer) : std::nullopt;

  switch (s.tag) {
    case StrategyTag::baseline:
      break;
    case StrategyTag::victor:
      plan.registers = s.subselect == SubselectMode::none ? s.tokens : s.subselect_count;
      plan.drop_layer = drop_at;
      plan.drop = DropRule::all_visual;
      break;
    case StrategyTag::registers_no_drop:
      plan.registers = s.subselect == SubselectMode::none ? s.tokens : s.subselect_count;
      break;
    case StrategyTag::fastv:
      if (s.tokens > n_visual) {
        throw ConfigError("strategy.tokens: fastv keeps " + std::to_string(s.tokens) + " of only " +
                          std::to_string(n_visual) + " visual tokens");
      }
      if (drop_at && *drop_at == 0) {
        throw ConfigError("strategy.drop_layer: fastv ranks tokens with the scores of layer k-1, so k must be >= 1");
      }
      if (model.attention_backend == AttentionBackend::fused) {
        throw StrategyError("fastv needs attention scores, which the fused attention backend never exposes");
      }
      plan.drop_layer = drop_at;
      plan.drop = DropRule::attention_topk;
      plan.keep_visual = s.tokens;
      plan.force_capture = true;
      break;
    case StrategyTag::resampler:
      if (s.tokens == 0) throw ConfigError("strategy.tokens: the resampler needs at least one query");
      if (s.resampler_blocks == 0) throw ConfigError("strategy.resampler_blocks: must be positive");
      plan.use_resampler = true;
      plan.keep_visual = s.tokens;
      break;
    case StrategyTag::tail_retention:
      if (s.tokens > n_visual) {
        throw ConfigError("strategy.tokens: tail retention keeps " + std::to_string(s.tokens) + " of only " +
                          std::to_string(n_visual) + " visual tokens");
      }
      plan.drop_layer = drop_at;
      plan.drop = DropRule::keep_tail;
      plan.keep_visual = s.tokens;
      break;
  }
  return plan;
}

DropResult drop_visual_rows(const Tensor& hidden, const TokenLayout& layout, std::vector<std::size_t> kept_visual) {
  if (layout.dropped) throw ContractError("drop: visual tokens were already dropped from this sequence");
  if (hidden.rows() != layout.total()) {
    throw ShapeError("drop: hidden has " + std::to_string(hidden.rows()) + " rows, layout expects " +
                     std::to_string(layout.total()));
  }
  for (std::size_t i = 0; i < kept_visual.size(); ++i) {
    if (kept_visual[i] >= layout.visual || (i > 0 && kept_visual[i] <= kept_visual[i - 1])) {
      throw ContractError("drop: kept visual indices must be ascending and inside the visual span");
    }
  }
  DropResult result;
  result.layout = layout;
  result.layout.dropped = true;
  result.layout.kept_visual = kept_visual.size();
  result.kept_rows = std::move(kept_visual);
  for (std::size_t r = layout.visual; r < layout.total(); ++r) result.kept_rows.push_back(r);
  if (result.layout.kept_visual == 0) {
    result.hidden = slice_rows(hidden, layout.visual, layout.total());
  } else {
    result.hidden = gather_rows(hidden, result.kept_rows);
  }
  return result;
}

DropResult victor_drop(const Tensor& hidden, const TokenLayout& layout) { return drop_visual_rows(hidden, layout, {}); }

DropResult tail_retention_drop(const Tensor& hidden, const TokenLayout& layout, std::size_t keep) {
  if (keep > layout.visual) {
    throw ContractError("tail_retention_drop: cannot keep " + std::to_string(keep) + " of " +
                        std::to_string(layout.visual) + " visual tokens");
  }
  if (layout.registers != 0) throw ContractError("tail_retention_drop: this ablation runs without registers");
  std::vector<std::size_t> kept(keep);
  std::iota(kept.begin(), kept.end(), layout.visual - keep);
  return drop_visual_rows(hidden, layout, std::move(kept));
}

std::vector<std::size_t> fastv_select(const AttentionRecord* record, const TokenLayout& layout, std::size_t keep,
                                      std::optional<std::size_t> query_end) {
  if (record == nullptr) {
    throw StrategyError("fastv_select: no attention scores were captured; fastv cannot run without them");
  }
  if (layout.dropped) throw ContractError("fastv_select: layout already dropped");
  if (keep > layout.visual) throw ContractError("fastv_select: keep exceeds the visual token count");
  if (record->keys < layout.visual || record->queries > record->keys) {
    throw ContractError("fastv_select: record does not cover the visual span");
  }
  // Query row q sits at sequence slot (keys - queries + q).
  const std::size_t first_slot = record->keys - record->queries;
  const std::size_t end_slot = std::min(record->keys, query_end.value_or(record->keys));

  const std::size_t n = layout.visual;
  std::vector<double> score(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double total = 0.0;
    std::size_t queries = 0;
    for (std::size_t slot = std::max(j + 1, first_slot); slot < end_slot; ++slot) {
      const std::size_t q = slot - first_slot;
      for (std::size_t h = 0; h < record->heads; ++h) total += record->prob(h, q, j);
      ++queries;
    }
    score[j] = queries ? total / static_cast<double>(queries * record->heads) : 0.0;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

ResamplerParams ResamplerParams::init(std::size_t n_queries, std::size_t n_blocks, std::size_t d_model,
                                      std::size_t d_ff, Rng& rng) {
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d_model));
  ResamplerParams p;
  p.queries = Tensor::randn({n_queries, d_model}, 0.02, rng, true);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    ResamplerBlock blk;
    blk.query_norm = Tensor::full({d_model}, 1.0, true);
    blk.context_norm = Tensor::full({d_model}, 1.0, true);
    blk.wq = Tensor::randn({d_model, d_model}, in_std, rng, true);
    blk.wk = Tensor::randn({d_model, d_model}, in_std, rng, true);
    blk.wv = Tensor::randn({d_model, d_model}, in_std, rng, true);
    blk.wo = Tensor::randn({d_model, d_model}, in_std, rng, true);
    blk.ffn_norm = Tensor::full({d_model}, 1.0, true);
    blk.w_in = Tensor::randn({d_model, d_ff}, in_std, rng, true);
    blk.w_out = Tensor::randn({d_ff, d_model}, 1.0 / std::sqrt(static_cast<double>(d_ff)), rng, true);
    p.blocks.push_back(std::move(blk));
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> ResamplerParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out{{"queries", queries}};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    for (const auto& [name, t] : std::initializer_list<std::pair<const char*, Tensor>>{
             {"query_norm", blk.query_norm}, {"context_norm", blk.context_norm}, {"wq", blk.wq}, {"wk", blk.wk},
             {"wv", blk.wv}, {"wo", blk.wo}, {"ffn_norm", blk.ffn_norm}, {"w_in", blk.w_in}, {"w_out", blk.w_out}}) {
      out.emplace_back(prefix + name, t);
    }
  }
  return out;
}

std::size_t ResamplerParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [_, t] : named()) total += t.numel();
  return total;
}

Tensor resample(const Tensor& visual, const ResamplerParams& params, std::size_t n_heads, double norm_eps) {
  if (visual.rank() != 2 || visual.rows() == 0) throw ShapeError("resample: needs at least one visual token");
  if (visual.cols() != params.queries.cols()) throw ShapeError("resample: visual width does not match the queries");
  const std::size_t m = params.queries.rows(), n = visual.rows();
  AttentionMask open;
  open.queries = m;
  open.keys = n;
  open.values.assign(m * n, 0.0);
  Tensor x = params.queries;
  for (const auto& blk : params.blocks) {
    const Tensor context = rms_norm(visual, blk.context_norm, norm_eps);
    const Tensor q = matmul(rms_norm(x, blk.query_norm, norm_eps), blk.wq);
    const Tensor k = matmul(context, blk.wk);
    const Tensor v = matmul(context, blk.wv);
    x = add(x, matmul(attention(q, k, v, open, n_heads, false).output, blk.wo));
    x = add(x, matmul(gelu(matmul(rms_norm(x, blk.ffn_norm, norm_eps), blk.w_in)), blk.w_out));
  }
  return x;
}

std::vector<std::pair<std::size_t, std::size_t>> pooling_chunks(std::size_t n, std::size_t count) {
  if (count == 0 || count > n) throw ConfigError("pooling: need 1..n chunks, got " + std::to_string(count));
  const std::size_t size = n / count;
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  for (std::size_t i = 0; i < count; ++i) chunks.emplace_back(i * size, i + 1 == count ? n : (i + 1) * size);
  return chunks;
}

RegisterBank init_registers(RegisterInit mode, std::size_t count, std::size_t d_model, const Tensor* visual,
                            const Tensor* word_vec, Rng* rng) {
  RegisterBank bank;
  bank.mode = mode;
  switch (mode) {
    case RegisterInit::learnable:
      if (rng == nullptr) throw ConfigError("init_registers: learnable registers need a random generator");
      bank.embeddings = Tensor::randn({count, d_model}, 0.02, *rng, true);
      break;
    case RegisterInit::zeros:
      bank.embeddings = Tensor::zeros({count, d_model});
      break;
    case RegisterInit::pooled_feature: {
      if (visual == nullptr || !visual->defined()) throw ConfigError("init_registers: pooled_feature needs visual tokens");
      if (visual->cols() != d_model) throw ShapeError("init_registers: visual width does not match d_model");
      if (count == 0) {
        bank.embeddings = Tensor::zeros({0, d_model});
        break;
      }
      const auto chunks = pooling_chunks(visual->rows(), count);
      bank.embeddings = mean_rows(*visual, chunks);
      break;
    }
    case RegisterInit::word_embedding: {
      if (word_vec == nullptr || !word_vec->defined()) throw ConfigError("init_registers: word_embedding needs a word vector");
      if (word_vec->numel() != d_model) throw ShapeError("init_registers: word vector width does not match d_model");
      if (count == 0) {
        bank.embeddings = Tensor::zeros({0, d_model});
        break;
      }
      const std::vector<std::size_t> copies(count, 0);
      bank.embeddings = gather_rows(reshape(*word_vec, {1, d_model}), copies);
      break;
    }
  }
  return bank;
}

RegisterBank subselect_registers(const RegisterBank& bank, std::size_t count, SubselectMode mode) {
  const std::size_t m = bank.count();
  if (count > m) {
    throw ContractError("subselect_registers: cannot select " + std::to_string(count) + " of " + std::to_string(m) +
                        " registers");
  }
  RegisterBank out;
  out.mode = bank.mode;
  switch (mode) {
    case SubselectMode::none:
      return bank;
    case SubselectMode::head:
      out.embeddings = slice_rows(bank.embeddings, 0, count);
      break;
    case SubselectMode::tail:
      out.embeddings = slice_rows(bank.embeddings, m - count, m);
      break;
  }
  return out;
}

}  // namespace regdrop

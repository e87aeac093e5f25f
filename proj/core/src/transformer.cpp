#include "regdrop/transformer.hpp"

#include <cmath>

#include <Eigen/Core>

#include "regdrop/errors.hpp"

namespace regdrop {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using detail::Node;

// Copies head h of a [rows × width] buffer into a contiguous rows × head_dim matrix.
RowMat head_block(const std::vector<double>& src, std::size_t rows, std::size_t width, std::size_t head,
                  std::size_t head_dim) {
  RowMat out(rows, head_dim);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < head_dim; ++j) out(i, j) = src[i * width + head * head_dim + j];
  return out;
}

void add_head_block(std::vector<double>& dst, const RowMat& block, std::size_t width, std::size_t head) {
  const auto rows = static_cast<std::size_t>(block.rows());
  const auto head_dim = static_cast<std::size_t>(block.cols());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < head_dim; ++j) dst[i * width + head * head_dim + j] += block(i, j);
}

void check_heads(std::size_t width, std::size_t n_heads, const char* op) {
  if (n_heads == 0 || width % n_heads != 0) {
    throw ConfigError(std::string(op) + ": head count " + std::to_string(n_heads) + " does not divide width " +
                      std::to_string(width));
  }
}

}  // namespace

Tensor apply_rope(const Tensor& x, std::span<const std::int64_t> position_ids, std::size_t head_dim, double base) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ConfigError("apply_rope: head_dim must be even, got " + std::to_string(head_dim));
  }
  if (x.rank() != 2) throw ShapeError("apply_rope: expected [len x width]");
  const std::size_t len = x.rows(), width = x.cols();
  if (width % head_dim != 0) throw ShapeError("apply_rope: width is not a multiple of head_dim");
  if (position_ids.size() != len) {
    throw ShapeError("apply_rope: " + std::to_string(position_ids.size()) + " position ids for " +
                     std::to_string(len) + " rows");
  }
  const std::size_t half = head_dim / 2;
  std::vector<double> cos_t(len * half), sin_t(len * half);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t p = 0; p < half; ++p) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(p) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(position_ids[i]) * freq;
      cos_t[i * half + p] = std::cos(angle);
      sin_t[i * half + p] = std::sin(angle);
    }
  }
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t c = 0; c < width; c += 2) {
      const std::size_t p = (c % head_dim) / 2;
      const double cs = cos_t[i * half + p], sn = sin_t[i * half + p];
      const double a = in[i * width + c], b = in[i * width + c + 1];
      out[i * width + c] = a * cs - b * sn;
      out[i * width + c + 1] = a * sn + b * cs;
    }
  }
  return detail::make_result(x.shape(), std::move(out), {x.node()},
                             [len, width, half, head_dim, cos_t = std::move(cos_t), sin_t = std::move(sin_t)](Node& self) {
                               auto& g = detail::grad_of(*self.parents[0]);
                               for (std::size_t i = 0; i < len; ++i) {
                                 for (std::size_t c = 0; c < width; c += 2) {
                                   const std::size_t p = (c % head_dim) / 2;
                                   const double cs = cos_t[i * half + p], sn = sin_t[i * half + p];
                                   const double ga = self.grad[i * width + c], gb = self.grad[i * width + c + 1];
                                   g[i * width + c] += ga * cs + gb * sn;
                                   g[i * width + c + 1] += -ga * sn + gb * cs;
                                 }
                               }
                             });
}

AttentionMask causal_mask(std::int64_t q_len, std::int64_t kv_len, std::int64_t q_offset) {
  if (q_len < 0 || kv_len < 0 || q_offset < 0) throw ContractError("causal_mask: negative length or offset");
  if (q_offset + q_len > kv_len) throw ContractError("causal_mask: queries extend past the key range");
  AttentionMask mask;
  mask.queries = static_cast<std::size_t>(q_len);
  mask.keys = static_cast<std::size_t>(kv_len);
  mask.values.assign(mask.queries * mask.keys, kMaskedScore);
  for (std::size_t i = 0; i < mask.queries; ++i) {
    const std::size_t last = static_cast<std::size_t>(q_offset) + i;
    for (std::size_t j = 0; j <= last; ++j) mask.values[i * mask.keys + j] = 0.0;
  }
  return mask;
}

AttentionOutput attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                          std::size_t n_heads, bool capture) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw ShapeError("attention: expected 2-d q, k, v");
  if (k.rows() != v.rows()) throw ShapeError("attention: key/value lengths differ");
  if (q.cols() != k.cols() || k.cols() != v.cols()) throw ShapeError("attention: width mismatch between q, k, v");
  if (mask.queries != q.rows() || mask.keys != k.rows()) throw ShapeError("attention: mask shape mismatch");
  check_heads(q.cols(), n_heads, "attention");
  const std::size_t head_dim = q.cols() / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  AttentionOutput result;
  if (capture) {
    AttentionRecord rec;
    rec.heads = n_heads;
    rec.queries = q.rows();
    rec.keys = k.rows();
    rec.probs.reserve(n_heads * rec.queries * rec.keys);
    result.record = std::move(rec);
  }
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor qh = slice_cols(q, h * head_dim, head_dim);
    const Tensor kh = slice_cols(k, h * head_dim, head_dim);
    const Tensor vh = slice_cols(v, h * head_dim, head_dim);
    const Tensor probs = masked_softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), mask.values);
    if (capture) result.record->probs.insert(result.record->probs.end(), probs.data().begin(), probs.data().end());
    heads.push_back(matmul(probs, vh));
  }
  result.output = n_heads == 1 ? heads.front() : concat_cols(heads);
  return result;
}

Tensor fused_causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                              std::size_t q_offset) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw ShapeError("fused_causal_attention: expected 2-d q, k, v");
  if (k.rows() != v.rows()) throw ShapeError("fused_causal_attention: key/value lengths differ");
  if (q.cols() != k.cols() || k.cols() != v.cols()) throw ShapeError("fused_causal_attention: width mismatch");
  if (k.rows() != q_offset + q.rows()) {
    throw ShapeError("fused_causal_attention: expected " + std::to_string(q_offset + q.rows()) + " keys, got " +
                     std::to_string(k.rows()));
  }
  check_heads(q.cols(), n_heads, "fused_causal_attention");
  const std::size_t lq = q.rows(), lk = k.rows(), width = q.cols();
  const std::size_t hd = width / n_heads;
  const auto off = static_cast<Eigen::Index>(q_offset);
  const auto elq = static_cast<Eigen::Index>(lq);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  const std::vector<double> qd(q.data().begin(), q.data().end());
  const std::vector<double> kd(k.data().begin(), k.data().end());
  const std::vector<double> vd(v.data().begin(), v.data().end());

  std::vector<RowMat> probs(n_heads);
  std::vector<double> out(lq * width, 0.0);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const RowMat qh = head_block(qd, lq, width, h, hd);
    const RowMat kh = head_block(kd, lk, width, h, hd);
    const RowMat vh = head_block(vd, lk, width, h, hd);
    RowMat s = RowMat::Zero(elq, static_cast<Eigen::Index>(lk));
    if (off > 0) s.leftCols(off).noalias() = qh * kh.topRows(off).transpose();
    s.middleCols(off, elq).triangularView<Eigen::Lower>() = qh * kh.middleRows(off, elq).transpose();
    for (Eigen::Index i = 0; i < elq; ++i) {
      const Eigen::Index allowed = off + i + 1;
      auto row = s.row(i).head(allowed);
      row *= inv_sqrt;
      const double mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
    RowMat oh = RowMat::Zero(elq, static_cast<Eigen::Index>(hd));
    if (off > 0) oh.noalias() += s.leftCols(off) * vh.topRows(off);
    oh.noalias() += s.middleCols(off, elq).triangularView<Eigen::Lower>() * vh.middleRows(off, elq);
    add_head_block(out, oh, width, h);
    probs[h] = std::move(s);
  }
  const std::uint64_t allowed_pairs = static_cast<std::uint64_t>(lq) * q_offset + lq * (lq + 1) / 2;
  add_macs(2 * allowed_pairs * width);

  if (!grad_enabled() || !(q.requires_grad() || k.requires_grad() || v.requires_grad())) {
    return detail::make_result(q.shape(), std::move(out), {}, {});
  }
  return detail::make_result(
      q.shape(), std::move(out), {q.node(), k.node(), v.node()},
      [lq, lk, width, hd, n_heads, off, elq, inv_sqrt, probs = std::move(probs)](Node& self) {
        auto& pq = self.parents[0];
        auto& pk = self.parents[1];
        auto& pv = self.parents[2];
        std::vector<double> dq(lq * width, 0.0), dk(lk * width, 0.0), dv(lk * width, 0.0);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const RowMat& p = probs[h];
          const RowMat qh = head_block(pq->data, lq, width, h, hd);
          const RowMat kh = head_block(pk->data, lk, width, h, hd);
          const RowMat vh = head_block(pv->data, lk, width, h, hd);
          const RowMat go = head_block(self.grad, lq, width, h, hd);

          RowMat gv = RowMat::Zero(static_cast<Eigen::Index>(lk), static_cast<Eigen::Index>(hd));
          if (off > 0) gv.topRows(off).noalias() += p.leftCols(off).transpose() * go;
          gv.middleRows(off, elq).noalias() +=
              p.middleCols(off, elq).triangularView<Eigen::Lower>().transpose() * go;

          RowMat gp = RowMat::Zero(elq, static_cast<Eigen::Index>(lk));
          if (off > 0) gp.leftCols(off).noalias() = go * vh.topRows(off).transpose();
          gp.middleCols(off, elq).triangularView<Eigen::Lower>() = go * vh.middleRows(off, elq).transpose();
          // dS = P ∘ (dP − rowsum(dP ∘ P)), scaled back through 1/sqrt(hd).
          for (Eigen::Index i = 0; i < elq; ++i) {
            const Eigen::Index allowed = off + i + 1;
            auto prow = p.row(i).head(allowed);
            auto grow = gp.row(i).head(allowed);
            const double dot = prow.dot(grow);
            grow = (prow.array() * (grow.array() - dot) * inv_sqrt).matrix();
          }
          RowMat gq = RowMat::Zero(elq, static_cast<Eigen::Index>(hd));
          if (off > 0) gq.noalias() += gp.leftCols(off) * kh.topRows(off);
          gq.noalias() += gp.middleCols(off, elq).triangularView<Eigen::Lower>() * kh.middleRows(off, elq);

          RowMat gk = RowMat::Zero(static_cast<Eigen::Index>(lk), static_cast<Eigen::Index>(hd));
          if (off > 0) gk.topRows(off).noalias() += gp.leftCols(off).transpose() * qh;
          gk.middleRows(off, elq).noalias() +=
              gp.middleCols(off, elq).triangularView<Eigen::Lower>().transpose() * qh;

          add_head_block(dq, gq, width, h);
          add_head_block(dk, gk, width, h);
          add_head_block(dv, gv, width, h);
        }
        auto accumulate = [](const std::shared_ptr<Node>& node, const std::vector<double>& g) {
          if (!node || !node->requires_grad) return;
          auto& dst = detail::grad_of(*node);
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
        };
        accumulate(pq, dq);
        accumulate(pk, dk);
        accumulate(pv, dv);
      });
}

std::string to_string(AttentionBackend backend) {
  switch (backend) {
    case AttentionBackend::automatic:
      return "auto";
    case AttentionBackend::eager:
      return "eager";
    case AttentionBackend::fused:
      return "fused";
  }
  return "auto";
}

AttentionBackend attention_backend_from_string(const std::string& name) {
  if (name == "auto") return AttentionBackend::automatic;
  if (name == "eager") return AttentionBackend::eager;
  if (name == "fused") return AttentionBackend::fused;
  throw ConfigError("unknown attention backend '" + name + "' (expected auto, eager or fused)");
}

LayerParams LayerParams::init(std::size_t d_model, std::size_t d_ff, std::size_t n_layers, Rng& rng) {
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d_model));
  const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(n_layers, 1)));
  LayerParams p;
  p.wq = Tensor::randn({d_model, d_model}, in_std, rng, true);
  p.wk = Tensor::randn({d_model, d_model}, in_std, rng, true);
  p.wv = Tensor::randn({d_model, d_model}, in_std, rng, true);
  p.wo = Tensor::randn({d_model, d_model}, in_std * out_scale, rng, true);
  p.w_gate = Tensor::randn({d_model, d_ff}, in_std, rng, true);
  p.w_up = Tensor::randn({d_model, d_ff}, in_std, rng, true);
  p.w_down = Tensor::randn({d_ff, d_model}, out_scale / std::sqrt(static_cast<double>(d_ff)), rng, true);
  p.attn_norm = Tensor::full({d_model}, 1.0, true);
  p.ffn_norm = Tensor::full({d_model}, 1.0, true);
  return p;
}

LayerParams LayerParams::zeros(std::size_t d_model, std::size_t d_ff) {
  LayerParams p;
  p.wq = Tensor::zeros({d_model, d_model}, true);
  p.wk = Tensor::zeros({d_model, d_model}, true);
  p.wv = Tensor::zeros({d_model, d_model}, true);
  p.wo = Tensor::zeros({d_model, d_model}, true);
  p.w_gate = Tensor::zeros({d_model, d_ff}, true);
  p.w_up = Tensor::zeros({d_model, d_ff}, true);
  p.w_down = Tensor::zeros({d_ff, d_model}, true);
  p.attn_norm = Tensor::zeros({d_model}, true);
  p.ffn_norm = Tensor::zeros({d_model}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> LayerParams::named() const {
  return {{"wq", wq},         {"wk", wk},         {"wv", wv},         {"wo", wo},          {"w_gate", w_gate},
          {"w_up", w_up},     {"w_down", w_down}, {"attn_norm", attn_norm}, {"ffn_norm", ffn_norm}};
}

LayerOutput decoder_layer(const Tensor& hidden, const LayerParams& params, std::span<const std::int64_t> position_ids,
                          LayerCache* cache, bool capture, bool eager, const LayerSettings& settings) {
  if (hidden.rank() != 2) throw ShapeError("decoder_layer: hidden must be [len x d_model]");
  if (hidden.rows() != position_ids.size()) {
    throw ShapeError("decoder_layer: " + std::to_string(hidden.rows()) + " rows but " +
                     std::to_string(position_ids.size()) + " position ids");
  }
  if (capture && !eager) throw StrategyError("decoder_layer: score capture requires the eager attention path");
  const std::size_t width = hidden.cols();
  check_heads(width, settings.n_heads, "decoder_layer");
  const std::size_t head_dim = width / settings.n_heads;

  const Tensor xn = rms_norm(hidden, params.attn_norm, settings.norm_eps);
  const Tensor q = apply_rope(matmul(xn, params.wq), position_ids, head_dim, settings.rope_base);
  Tensor k = apply_rope(matmul(xn, params.wk), position_ids, head_dim, settings.rope_base);
  Tensor v = matmul(xn, params.wv);

  std::size_t offset = 0;
  PositionIds key_positions;
  if (cache) {
    if (cache->width == 0) cache->width = width;
    if (cache->width != width) {
      throw CacheError("decoder_layer: cache width " + std::to_string(cache->width) + " does not match hidden width " +
                       std::to_string(width));
    }
    offset = cache->length();
    if (offset > 0) {
      const Tensor past_k = Tensor::from({offset, width}, cache->keys);
      const Tensor past_v = Tensor::from({offset, width}, cache->values);
      cache->keys.insert(cache->keys.end(), k.data().begin(), k.data().end());
      cache->values.insert(cache->values.end(), v.data().begin(), v.data().end());
      k = concat_rows({past_k, k});
      v = concat_rows({past_v, v});
    } else {
      cache->keys.assign(k.data().begin(), k.data().end());
      cache->values.assign(v.data().begin(), v.data().end());
    }
    if (capture) key_positions = cache->positions;
    cache->positions.insert(cache->positions.end(), position_ids.begin(), position_ids.end());
  }

  LayerOutput result;
  Tensor attn;
  if (eager) {
    const AttentionMask mask = causal_mask(static_cast<std::int64_t>(q.rows()), static_cast<std::int64_t>(k.rows()),
                                           static_cast<std::int64_t>(offset));
    AttentionOutput a = attention(q, k, v, mask, settings.n_heads, capture);
    attn = std::move(a.output);
    if (capture) {
      a.record->query_positions.assign(position_ids.begin(), position_ids.end());
      key_positions.insert(key_positions.end(), position_ids.begin(), position_ids.end());
      a.record->key_positions = std::move(key_positions);
      result.record = std::move(a.record);
    }
  } else {
    attn = fused_causal_attention(q, k, v, settings.n_heads, offset);
  }

  const Tensor h = add(hidden, matmul(attn, params.wo));
  const Tensor hn = rms_norm(h, params.ffn_norm, settings.norm_eps);
  const Tensor gated = mul(silu(matmul(hn, params.w_gate)), matmul(hn, params.w_up));
  result.hidden = add(h, matmul(gated, params.w_down));
  return result;
}

}  // namespace regdrop

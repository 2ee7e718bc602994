// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scaled dot-product attention, multi-head attention, and the two pre-LN
// residual blocks (self and cross) built from it. Weights are applied on the
// right: projected = x * W + b with W[d_in x d_out]; head n owns columns
// [n * d_head, (n + 1) * d_head) of every projection.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "xstitch/params.hpp"
#include "xstitch/tensor.hpp"

namespace xstitch {

// true = real position.
using PadMask = std::vector<bool>;

inline std::size_t count_real(const PadMask& m) {
  std::size_t n = 0;
  for (bool b : m) n += b;
  return n;
}

class AttentionMask {
 public:
  AttentionMask(std::size_t queries, std::size_t keys, bool allowed = true)
      : queries_(queries), keys_(keys), allowed_(queries * keys, allowed) {}

  static AttentionMask full(std::size_t queries, std::size_t keys) { return {queries, keys, true}; }

  // Every query sees exactly the real keys.
  static AttentionMask from_keys(std::size_t queries, const PadMask& key_mask) {
    AttentionMask m(queries, key_mask.size(), false);
    for (std::size_t i = 0; i < queries; ++i)
      for (std::size_t j = 0; j < key_mask.size(); ++j) m.set(i, j, key_mask[j]);
    return m;
  }

  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }
  bool allowed(std::size_t i, std::size_t j) const { return allowed_[i * keys_ + j]; }
  void set(std::size_t i, std::size_t j, bool v) { allowed_[i * keys_ + j] = v; }

  void validate() const {
    for (std::size_t i = 0; i < queries_; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < keys_ && !any; ++j) any = allowed(i, j);
      if (!any) throw ConfigError("attention mask hides every key from query row " + std::to_string(i));
    }
  }

 private:
  std::size_t queries_, keys_;
  std::vector<bool> allowed_;
};

inline constexpr double kMaskedLogit = -1e9;
inline constexpr std::size_t kDefaultMaxRelativeDistance = 8;

// Learned key-side offsets for clipped relative distances j - i.
struct RelativePositionTable {
  std::size_t k_max = kDefaultMaxRelativeDistance;
  ParamId emb;  // [(2 * k_max + 1) x d_head]

  std::size_t index(std::size_t query, std::size_t key) const {
    const long k = static_cast<long>(k_max);
    long off = static_cast<long>(key) - static_cast<long>(query);
    off = std::clamp(off, -k, k);
    return static_cast<std::size_t>(off + k);
  }
};

struct AttentionOutput {
  Tensor out;
  Tensor weights;
};

struct AttentionGrads {
  Tensor dq, dk, dv;
  Tensor drel;  // empty unless a relative table took part
};

namespace detail {

inline AttentionOutput attend(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                              const RelativePositionTable* rel, const Tensor* rel_emb) {
  if (q.cols() != k.cols())
    throw DimensionError("attention query/key width mismatch: " + shape_string(q.shape()) + " vs " +
                         shape_string(k.shape()));
  if (k.rows() != v.rows())
    throw DimensionError("attention key/value length mismatch: " + shape_string(k.shape()) + " vs " +
                         shape_string(v.shape()));
  if (mask.queries() != q.rows() || mask.keys() != k.rows())
    throw DimensionError("attention mask is " + std::to_string(mask.queries()) + "x" + std::to_string(mask.keys()) +
                         " for " + std::to_string(q.rows()) + " queries and " + std::to_string(k.rows()) + " keys");
  mask.validate();

  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor scores = matmul_nt(q, k);
  if (rel) {
    const Tensor offsets = matmul_nt(q, *rel_emb);  // [T_q x (2k+1)]
    for (std::size_t i = 0; i < scores.rows(); ++i)
      for (std::size_t j = 0; j < scores.cols(); ++j) scores(i, j) += offsets(i, rel->index(i, j));
  }
  for (std::size_t i = 0; i < scores.rows(); ++i)
    for (std::size_t j = 0; j < scores.cols(); ++j) {
      scores(i, j) *= scale;
      if (!mask.allowed(i, j)) scores(i, j) += kMaskedLogit;
    }
  AttentionOutput res;
  res.weights = softmax_rows(scores);
  res.out = matmul(res.weights, v);
  return res;
}

inline AttentionGrads attend_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& weights,
                                      const Tensor& dout, const RelativePositionTable* rel, const Tensor* rel_emb) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  AttentionGrads g;
  g.dv = matmul_tn(weights, dout);
  const Tensor dweights = matmul_nt(dout, v);
  Tensor dscores = softmax_rows_backward(weights, dweights);
  scale_inplace(dscores, scale);
  g.dq = matmul(dscores, k);
  g.dk = matmul_tn(dscores, q);
  if (rel) {
    Tensor doffsets({q.rows(), rel_emb->rows()});
    for (std::size_t i = 0; i < dscores.rows(); ++i)
      for (std::size_t j = 0; j < dscores.cols(); ++j) doffsets(i, rel->index(i, j)) += dscores(i, j);
    add_inplace(g.dq, matmul(doffsets, *rel_emb));
    g.drel = matmul_tn(doffsets, q);
  }
  return g;
}

}  // namespace detail

// weights = softmax(q k^T / sqrt(d) + mask), out = weights v.
inline AttentionOutput scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                            const AttentionMask& mask) {
  return detail::attend(q, k, v, mask, nullptr, nullptr);
}

inline AttentionGrads scaled_dot_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                                                    const Tensor& weights, const Tensor& dout) {
  return detail::attend_backward(q, k, v, weights, dout, nullptr, nullptr);
}

struct MultiHeadParams {
  std::size_t heads = 0;
  std::size_t d_model = 0;
  ParamId wq, bq, wk, bk, wv, bv, wo, bo;

  std::size_t d_head() const { return d_model / heads; }
};

inline void check_heads(std::size_t d_model, std::size_t heads) {
  if (heads == 0 || d_model == 0 || d_model % heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) +
                      " heads");
}

inline MultiHeadParams make_multi_head(ParamStore& store, const std::string& prefix, std::size_t d_model,
                                       std::size_t heads, Rng& rng, double stddev) {
  check_heads(d_model, heads);
  MultiHeadParams p;
  p.heads = heads;
  p.d_model = d_model;
  p.wq = store.add_normal(prefix + ".wq", {d_model, d_model}, rng, stddev);
  p.bq = store.add_constant(prefix + ".bq", {d_model}, 0.0);
  p.wk = store.add_normal(prefix + ".wk", {d_model, d_model}, rng, stddev);
  p.bk = store.add_constant(prefix + ".bk", {d_model}, 0.0);
  p.wv = store.add_normal(prefix + ".wv", {d_model, d_model}, rng, stddev);
  p.bv = store.add_constant(prefix + ".bv", {d_model}, 0.0);
  p.wo = store.add_normal(prefix + ".wo", {d_model, d_model}, rng, stddev);
  p.bo = store.add_constant(prefix + ".bo", {d_model}, 0.0);
  return p;
}

struct MultiHeadCache {
  Tensor q_src, kv_src;
  Tensor q, k, v;               // projected, all heads side by side
  std::vector<Tensor> weights;  // per head [T_q x T_k]
  Tensor concat;                // [T_q x d_model] before the output projection
};

// [head_1, ..., head_h] * W_o with head_n = Attention(q W_q^n, kv W_k^n, kv W_v^n).
inline Tensor multi_head_attention(const ParamStore& store, const MultiHeadParams& p, const Tensor& q_src,
                                   const Tensor& kv_src, const AttentionMask& mask,
                                   const std::optional<RelativePositionTable>& rel = std::nullopt,
                                   MultiHeadCache* cache = nullptr) {
  check_heads(p.d_model, p.heads);
  if (q_src.cols() != p.d_model || kv_src.cols() != p.d_model)
    throw DimensionError("multi-head attention expects width " + std::to_string(p.d_model) + ", got " +
                         shape_string(q_src.shape()) + " and " + shape_string(kv_src.shape()));
  if (rel && &q_src != &kv_src && !(q_src == kv_src))
    throw ConfigError("relative positions are only defined for self-attention");

  const std::size_t dh = p.d_head();
  Tensor q = linear(q_src, store.value(p.wq), store.value(p.bq));
  Tensor k = linear(kv_src, store.value(p.wk), store.value(p.bk));
  Tensor v = linear(kv_src, store.value(p.wv), store.value(p.bv));
  const Tensor* rel_emb = rel ? &store.value(rel->emb) : nullptr;
  if (rel_emb && rel_emb->cols() != dh) throw DimensionError("relative table width must equal the head width");

  Tensor concat({q_src.rows(), p.d_model});
  std::vector<Tensor> weights;
  weights.reserve(p.heads);
  for (std::size_t n = 0; n < p.heads; ++n) {
    auto head = detail::attend(slice_cols(q, n * dh, dh), slice_cols(k, n * dh, dh), slice_cols(v, n * dh, dh), mask,
                               rel ? &*rel : nullptr, rel_emb);
    add_into_cols(concat, head.out, n * dh);
    weights.push_back(std::move(head.weights));
  }
  Tensor out = linear(concat, store.value(p.wo), store.value(p.bo));
  if (cache) {
    cache->q_src = q_src;
    cache->kv_src = kv_src;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->weights = std::move(weights);
    cache->concat = std::move(concat);
  }
  return out;
}

struct MultiHeadInputGrads {
  Tensor d_q_src, d_kv_src;
};

// Accumulates parameter gradients into `store` and returns input gradients.
inline MultiHeadInputGrads multi_head_attention_backward(ParamStore& store, const MultiHeadParams& p,
                                                         const MultiHeadCache& c, const Tensor& dout,
                                                         const std::optional<RelativePositionTable>& rel) {
  const std::size_t dh = p.d_head();
  accumulate_tn(store.grad(p.wo), c.concat, dout);
  accumulate_column_sums(store.grad(p.bo), dout);
  const Tensor dconcat = matmul_nt(dout, store.value(p.wo));

  const Tensor* rel_emb = rel ? &store.value(rel->emb) : nullptr;
  Tensor dq(c.q.shape()), dk(c.k.shape()), dv(c.v.shape());
  for (std::size_t n = 0; n < p.heads; ++n) {
    auto g = detail::attend_backward(slice_cols(c.q, n * dh, dh), slice_cols(c.k, n * dh, dh),
                                     slice_cols(c.v, n * dh, dh), c.weights[n], slice_cols(dconcat, n * dh, dh),
                                     rel ? &*rel : nullptr, rel_emb);
    add_into_cols(dq, g.dq, n * dh);
    add_into_cols(dk, g.dk, n * dh);
    add_into_cols(dv, g.dv, n * dh);
    if (rel) add_inplace(store.grad(rel->emb), g.drel);
  }

  accumulate_tn(store.grad(p.wq), c.q_src, dq);
  accumulate_column_sums(store.grad(p.bq), dq);
  accumulate_tn(store.grad(p.wk), c.kv_src, dk);
  accumulate_column_sums(store.grad(p.bk), dk);
  accumulate_tn(store.grad(p.wv), c.kv_src, dv);
  accumulate_column_sums(store.grad(p.bv), dv);

  MultiHeadInputGrads out;
  out.d_q_src = matmul_nt(dq, store.value(p.wq));
  out.d_kv_src = matmul_nt(dk, store.value(p.wk));
  add_inplace(out.d_kv_src, matmul_nt(dv, store.value(p.wv)));
  return out;
}

// Pre-LN transformer block parameters. `rel` is set only for blocks that
// run relative-position self-attention.
struct BlockParams {
  MultiHeadParams attn;
  ParamId ln1_g, ln1_b, ln2_g, ln2_b;
  ParamId ff1_w, ff1_b, ff2_w, ff2_b;
  std::optional<RelativePositionTable> rel;

  std::size_t d_model() const { return attn.d_model; }
};

inline constexpr std::size_t kFfnExpansion = 4;

inline BlockParams make_block(ParamStore& store, const std::string& prefix, std::size_t d_model, std::size_t heads,
                              Rng& rng, double stddev, std::optional<std::size_t> rel_k_max = std::nullopt) {
  BlockParams b;
  b.attn = make_multi_head(store, prefix + ".attn", d_model, heads, rng, stddev);
  b.ln1_g = store.add_constant(prefix + ".ln1.g", {d_model}, 1.0);
  b.ln1_b = store.add_constant(prefix + ".ln1.b", {d_model}, 0.0);
  b.ln2_g = store.add_constant(prefix + ".ln2.g", {d_model}, 1.0);
  b.ln2_b = store.add_constant(prefix + ".ln2.b", {d_model}, 0.0);
  const std::size_t d_ff = kFfnExpansion * d_model;
  b.ff1_w = store.add_normal(prefix + ".ff1.w", {d_model, d_ff}, rng, stddev);
  b.ff1_b = store.add_constant(prefix + ".ff1.b", {d_ff}, 0.0);
  b.ff2_w = store.add_normal(prefix + ".ff2.w", {d_ff, d_model}, rng, stddev);
  b.ff2_b = store.add_constant(prefix + ".ff2.b", {d_model}, 0.0);
  if (rel_k_max) {
    RelativePositionTable t;
    t.k_max = *rel_k_max;
    t.emb = store.add_normal(prefix + ".rel", {2 * t.k_max + 1, d_model / heads}, rng, stddev);
    b.rel = t;
  }
  return b;
}

// Zeroes the attention output projection and the second FFN layer so the
// block reduces to its residual path.
inline void zero_sublayer_outputs(ParamStore& store, const BlockParams& b) {
  for (ParamId id : {b.attn.wo, b.attn.bo, b.ff2_w, b.ff2_b}) store.value(id).fill(0.0);
}

struct BlockCache {
  LayerNormCache ln1;
  Tensor ln1_out;
  MultiHeadCache attn;
  LayerNormCache ln2;
  Tensor ln2_out;
  Tensor ff_pre;  // before GELU
  Tensor ff_act;
};

namespace detail {

// out = y + FFN(LN2(y))
inline Tensor ffn_residual(const ParamStore& store, const BlockParams& p, const Tensor& y, BlockCache* cache) {
  LayerNormCache ln2;
  Tensor n2 = layer_norm(y, store.value(p.ln2_g), store.value(p.ln2_b), kLayerNormEps, cache ? &ln2 : nullptr);
  Tensor pre = linear(n2, store.value(p.ff1_w), store.value(p.ff1_b));
  Tensor act = gelu(pre);
  Tensor out = linear(act, store.value(p.ff2_w), store.value(p.ff2_b));
  add_inplace(out, y);
  if (cache) {
    cache->ln2 = std::move(ln2);
    cache->ln2_out = std::move(n2);
    cache->ff_pre = std::move(pre);
    cache->ff_act = std::move(act);
  }
  return out;
}

// Returns dL/dy for y feeding ffn_residual.
inline Tensor ffn_residual_backward(ParamStore& store, const BlockParams& p, const BlockCache& c, const Tensor& dout) {
  accumulate_tn(store.grad(p.ff2_w), c.ff_act, dout);
  accumulate_column_sums(store.grad(p.ff2_b), dout);
  Tensor dact = matmul_nt(dout, store.value(p.ff2_w));
  Tensor dpre = gelu_backward(c.ff_pre, dact);
  accumulate_tn(store.grad(p.ff1_w), c.ln2_out, dpre);
  accumulate_column_sums(store.grad(p.ff1_b), dpre);
  Tensor dn2 = matmul_nt(dpre, store.value(p.ff1_w));
  Tensor dy = layer_norm_backward(c.ln2, store.value(p.ln2_g), dn2, store.grad(p.ln2_g), store.grad(p.ln2_b));
  add_inplace(dy, dout);
  return dy;
}

}  // namespace detail

// y = x + MHA(LN1(x), LN1(x)); out = y + FFN(LN2(y)).
inline Tensor self_attention_block(const ParamStore& store, const BlockParams& p, const Tensor& x,
                                   const AttentionMask& mask, BlockCache* cache = nullptr) {
  LayerNormCache ln1;
  Tensor n1 = layer_norm(x, store.value(p.ln1_g), store.value(p.ln1_b), kLayerNormEps, cache ? &ln1 : nullptr);
  Tensor y = multi_head_attention(store, p.attn, n1, n1, mask, p.rel, cache ? &cache->attn : nullptr);
  add_inplace(y, x);
  Tensor out = detail::ffn_residual(store, p, y, cache);
  if (cache) {
    cache->ln1 = std::move(ln1);
    cache->ln1_out = std::move(n1);
  }
  return out;
}

inline Tensor self_attention_block_backward(ParamStore& store, const BlockParams& p, const BlockCache& c,
                                            const Tensor& dout) {
  Tensor dy = detail::ffn_residual_backward(store, p, c, dout);
  auto g = multi_head_attention_backward(store, p.attn, c.attn, dy, p.rel);
  add_inplace(g.d_q_src, g.d_kv_src);
  Tensor dx = layer_norm_backward(c.ln1, store.value(p.ln1_g), g.d_q_src, store.grad(p.ln1_g), store.grad(p.ln1_b));
  add_inplace(dx, dy);
  return dx;
}

// y = q + MHA(LN1(q), kv); out = y + FFN(LN2(y)). Keys and values come from
// the other stream as-is and carry no positional term.
inline Tensor cross_attention_block(const ParamStore& store, const BlockParams& p, const Tensor& q_stream,
                                    const Tensor& kv_stream, const AttentionMask& mask, BlockCache* cache = nullptr) {
  if (p.rel) throw ConfigError("cross-attention blocks carry no relative-position table");
  LayerNormCache ln1;
  Tensor n1 =
      layer_norm(q_stream, store.value(p.ln1_g), store.value(p.ln1_b), kLayerNormEps, cache ? &ln1 : nullptr);
  Tensor y = multi_head_attention(store, p.attn, n1, kv_stream, mask, std::nullopt, cache ? &cache->attn : nullptr);
  add_inplace(y, q_stream);
  Tensor out = detail::ffn_residual(store, p, y, cache);
  if (cache) {
    cache->ln1 = std::move(ln1);
    cache->ln1_out = std::move(n1);
  }
  return out;
}

struct CrossBlockGrads {
  Tensor d_q_stream, d_kv_stream;
};

inline CrossBlockGrads cross_attention_block_backward(ParamStore& store, const BlockParams& p, const BlockCache& c,
                                                      const Tensor& dout) {
  Tensor dy = detail::ffn_residual_backward(store, p, c, dout);
  auto g = multi_head_attention_backward(store, p.attn, c.attn, dy, std::nullopt);
  CrossBlockGrads out;
  out.d_q_stream =
      layer_norm_backward(c.ln1, store.value(p.ln1_g), g.d_q_src, store.grad(p.ln1_g), store.grad(p.ln1_b));
  add_inplace(out.d_q_stream, dy);
  out.d_kv_stream = std::move(g.d_kv_src);
  return out;
}

// Head-averaged attention weights recorded in a block cache.
inline Tensor mean_head_weights(const BlockCache& c) {
  Tensor avg(c.attn.weights.at(0).shape());
  for (const auto& w : c.attn.weights) add_inplace(avg, w);
  scale_inplace(avg, 1.0 / static_cast<double>(c.attn.weights.size()));
  return avg;
}

}  // namespace xstitch

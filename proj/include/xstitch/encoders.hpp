// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Speech-frame and text-token encoders producing the two temporal streams
// that the cross-stitch fuses, plus layer truncation and a masked
// reconstruction pretext task used in place of large-scale pretraining.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "xstitch/attention.hpp"
#include "xstitch/optimizer.hpp"
#include "xstitch/vocab.hpp"

namespace xstitch {

struct EncoderOutput {
  Tensor seq;        // [T x d_model]
  PadMask pad_mask;  // true = real position

  std::size_t length() const { return seq.rows(); }
};

inline constexpr std::size_t kConvKernel = 3;
inline constexpr double kDefaultInitStd = 0.02;

// ceil(t / 2): output length of a kernel-3, stride-2, pad-1 convolution.
inline std::size_t conv_output_length(std::size_t t) { return (t + 1) / 2; }
inline std::size_t speech_output_length(std::size_t t) { return conv_output_length(conv_output_length(t)); }

struct SpeechEncoderParams {
  std::size_t d_in = 0;
  std::size_t d_model = 0;
  ParamId conv1_w, conv1_b;  // [3 * d_in x d_model]
  ParamId conv2_w, conv2_b;  // [3 * d_model x d_model]
  std::vector<BlockParams> blocks;
  ParamId final_g, final_b;
};

struct TextEncoderParams {
  std::size_t vocab_size = 0;
  std::size_t d_model = 0;
  ParamId emb;  // [V x d_model]
  std::vector<BlockParams> blocks;
  ParamId final_g, final_b;
};

inline SpeechEncoderParams make_speech_encoder(ParamStore& store, const std::string& prefix, std::size_t d_in,
                                               std::size_t d_model, std::size_t heads, std::size_t layers, Rng& rng,
                                               double stddev = kDefaultInitStd) {
  if (layers == 0) throw ConfigError("speech encoder needs at least one block");
  SpeechEncoderParams p;
  p.d_in = d_in;
  p.d_model = d_model;
  p.conv1_w = store.add_normal(prefix + ".conv1.w", {kConvKernel * d_in, d_model}, rng, stddev);
  p.conv1_b = store.add_constant(prefix + ".conv1.b", {d_model}, 0.0);
  p.conv2_w = store.add_normal(prefix + ".conv2.w", {kConvKernel * d_model, d_model}, rng, stddev);
  p.conv2_b = store.add_constant(prefix + ".conv2.b", {d_model}, 0.0);
  for (std::size_t i = 0; i < layers; ++i)
    p.blocks.push_back(make_block(store, prefix + ".block" + std::to_string(i), d_model, heads, rng, stddev));
  p.final_g = store.add_constant(prefix + ".final_ln.g", {d_model}, 1.0);
  p.final_b = store.add_constant(prefix + ".final_ln.b", {d_model}, 0.0);
  return p;
}

inline TextEncoderParams make_text_encoder(ParamStore& store, const std::string& prefix, std::size_t vocab_size,
                                           std::size_t d_model, std::size_t heads, std::size_t layers,
                                           std::size_t k_max, Rng& rng, double stddev = kDefaultInitStd) {
  if (layers == 0) throw ConfigError("text encoder needs at least one block");
  if (vocab_size < 4) throw ConfigError("text vocabulary must hold the special tokens");
  TextEncoderParams p;
  p.vocab_size = vocab_size;
  p.d_model = d_model;
  p.emb = store.add_normal(prefix + ".emb", {vocab_size, d_model}, rng, stddev);
  for (std::size_t i = 0; i < layers; ++i)
    p.blocks.push_back(make_block(store, prefix + ".block" + std::to_string(i), d_model, heads, rng, stddev, k_max));
  p.final_g = store.add_constant(prefix + ".final_ln.g", {d_model}, 1.0);
  p.final_b = store.add_constant(prefix + ".final_ln.b", {d_model}, 0.0);
  return p;
}

// First `keep` blocks of a stack.
inline std::vector<BlockParams> truncate_layers(const std::vector<BlockParams>& blocks, std::size_t keep) {
  if (keep < 1 || keep > blocks.size())
    throw ConfigError("cannot keep " + std::to_string(keep) + " of " + std::to_string(blocks.size()) + " blocks");
  return {blocks.begin(), blocks.begin() + static_cast<std::ptrdiff_t>(keep)};
}

// Runs a stack of self-attention blocks; `taps` (if given) receives the
// activation after every block.
inline Tensor run_blocks(const ParamStore& store, std::span<const BlockParams> blocks, Tensor x,
                         const AttentionMask& mask, std::vector<BlockCache>* caches = nullptr,
                         std::vector<Tensor>* taps = nullptr) {
  if (caches) caches->assign(blocks.size(), BlockCache{});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = self_attention_block(store, blocks[i], x, mask, caches ? &(*caches)[i] : nullptr);
    if (taps) taps->push_back(x);
  }
  return x;
}

inline Tensor run_blocks_backward(ParamStore& store, std::span<const BlockParams> blocks,
                                  const std::vector<BlockCache>& caches, Tensor dx) {
  for (std::size_t i = blocks.size(); i-- > 0;) dx = self_attention_block_backward(store, blocks[i], caches[i], dx);
  return dx;
}

namespace detail {

struct ConvCache {
  Tensor cols;  // im2col rows [T_out x 3C]
  Tensor pre;   // before GELU
  PadMask in_mask;
};

// Kernel 3, stride 2, zero padding 1. Masked input rows are treated as zero.
inline Tensor conv_stride2(const Tensor& x, const PadMask& mask, const Tensor& w, const Tensor& b, ConvCache* cache,
                           PadMask& out_mask) {
  const std::size_t t_in = x.rows(), c = x.cols(), t_out = conv_output_length(t_in);
  if (w.rows() != kConvKernel * c) throw DimensionError("conv input width " + std::to_string(c) + " does not match kernel");
  Tensor cols({t_out, kConvKernel * c});
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t k = 0; k < kConvKernel; ++k) {
      const long src = 2 * static_cast<long>(t) - 1 + static_cast<long>(k);
      if (src < 0 || src >= static_cast<long>(t_in) || !mask[static_cast<std::size_t>(src)]) continue;
      std::copy_n(x.row(static_cast<std::size_t>(src)).data(), c, cols.row(t).data() + k * c);
    }
  }
  out_mask.assign(t_out, false);
  for (std::size_t t = 0; t < t_out; ++t) out_mask[t] = mask[2 * t];
  Tensor pre = linear(cols, w, b);
  Tensor out = gelu(pre);
  if (cache) {
    cache->cols = std::move(cols);
    cache->pre = std::move(pre);
    cache->in_mask = mask;
  }
  return out;
}

inline Tensor conv_stride2_backward(const ConvCache& c, const Tensor& w, const Tensor& dout, Tensor& dw, Tensor& db,
                                    std::size_t t_in) {
  Tensor dpre = gelu_backward(c.pre, dout);
  accumulate_tn(dw, c.cols, dpre);
  accumulate_column_sums(db, dpre);
  const Tensor dcols = matmul_nt(dpre, w);
  const std::size_t ch = w.rows() / kConvKernel;
  Tensor dx({t_in, ch});
  for (std::size_t t = 0; t < dcols.rows(); ++t) {
    for (std::size_t k = 0; k < kConvKernel; ++k) {
      const long src = 2 * static_cast<long>(t) - 1 + static_cast<long>(k);
      if (src < 0 || src >= static_cast<long>(t_in) || !c.in_mask[static_cast<std::size_t>(src)]) continue;
      auto d = dx.row(static_cast<std::size_t>(src));
      const double* s = dcols.row(t).data() + k * ch;
      for (std::size_t j = 0; j < ch; ++j) d[j] += s[j];
    }
  }
  return dx;
}

}  // namespace detail

struct SpeechEncoderCache {
  detail::ConvCache conv1, conv2;
  std::size_t t_in = 0, t_mid = 0;
  std::vector<BlockCache> blocks;
  LayerNormCache final_ln;
};

// Frames [T_in x d_in] -> 4x downsampled sequence of d_model vectors. An
// empty `frame_mask` marks every frame real.
inline EncoderOutput encode_speech(const ParamStore& store, const SpeechEncoderParams& p, const Tensor& frames,
                                   PadMask frame_mask = {}, SpeechEncoderCache* cache = nullptr) {
  if (frames.rank() != 2 || frames.cols() != p.d_in)
    throw DimensionError("speech frames must be [T x " + std::to_string(p.d_in) + "], got " +
                         shape_string(frames.shape()));
  if (frame_mask.empty()) frame_mask.assign(frames.rows(), true);
  if (frame_mask.size() != frames.rows()) throw DimensionError("frame mask length does not match frame count");
  if (count_real(frame_mask) < 4)
    throw DataError("speech input too short: " + std::to_string(count_real(frame_mask)) + " real frames, need 4");

  PadMask mid_mask, out_mask;
  Tensor h1 = detail::conv_stride2(frames, frame_mask, store.value(p.conv1_w), store.value(p.conv1_b),
                                   cache ? &cache->conv1 : nullptr, mid_mask);
  Tensor h2 = detail::conv_stride2(h1, mid_mask, store.value(p.conv2_w), store.value(p.conv2_b),
                                   cache ? &cache->conv2 : nullptr, out_mask);
  const auto mask = AttentionMask::from_keys(h2.rows(), out_mask);
  Tensor x = run_blocks(store, p.blocks, std::move(h2), mask, cache ? &cache->blocks : nullptr);
  EncoderOutput out;
  out.seq = layer_norm(x, store.value(p.final_g), store.value(p.final_b), kLayerNormEps,
                       cache ? &cache->final_ln : nullptr);
  out.pad_mask = std::move(out_mask);
  if (cache) {
    cache->t_in = frames.rows();
    cache->t_mid = h1.rows();
  }
  return out;
}

inline void encode_speech_backward(ParamStore& store, const SpeechEncoderParams& p, const SpeechEncoderCache& c,
                                   const Tensor& dseq) {
  Tensor dx =
      layer_norm_backward(c.final_ln, store.value(p.final_g), dseq, store.grad(p.final_g), store.grad(p.final_b));
  dx = run_blocks_backward(store, p.blocks, c.blocks, std::move(dx));
  Tensor dh1 = detail::conv_stride2_backward(c.conv2, store.value(p.conv2_w), dx, store.grad(p.conv2_w),
                                             store.grad(p.conv2_b), c.t_mid);
  detail::conv_stride2_backward(c.conv1, store.value(p.conv1_w), dh1, store.grad(p.conv1_w), store.grad(p.conv1_b),
                                c.t_in);
}

struct TextEncoderCache {
  std::vector<TokenId> ids;
  std::vector<BlockCache> blocks;
  LayerNormCache final_ln;
};

// Token ids -> contextual vectors. The first real position must hold [CLS].
// An empty `mask` marks every position real.
inline EncoderOutput encode_text(const ParamStore& store, const TextEncoderParams& p, std::span<const TokenId> ids,
                                 PadMask mask = {}, TextEncoderCache* cache = nullptr) {
  if (ids.empty()) throw DataError("text encoder input is empty");
  if (mask.empty()) mask.assign(ids.size(), true);
  if (mask.size() != ids.size()) throw DimensionError("token mask length does not match token count");
  const Tensor& emb = store.value(p.emb);
  Tensor x({ids.size(), p.d_model});
  bool seen_real = false;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= p.vocab_size)
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(p.vocab_size));
    if (mask[i] && !seen_real) {
      if (id != Vocab::kCls) throw DataError("first real text position must be [CLS]");
      seen_real = true;
    }
    std::copy_n(emb.row(static_cast<std::size_t>(id)).data(), p.d_model, x.row(i).data());
  }
  if (!seen_real) throw DataError("text input has no real positions");
  const auto amask = AttentionMask::from_keys(ids.size(), mask);
  x = run_blocks(store, p.blocks, std::move(x), amask, cache ? &cache->blocks : nullptr);
  EncoderOutput out;
  out.seq = layer_norm(x, store.value(p.final_g), store.value(p.final_b), kLayerNormEps,
                       cache ? &cache->final_ln : nullptr);
  out.pad_mask = std::move(mask);
  if (cache) cache->ids.assign(ids.begin(), ids.end());
  return out;
}

inline void encode_text_backward(ParamStore& store, const TextEncoderParams& p, const TextEncoderCache& c,
                                 const Tensor& dseq) {
  Tensor dx =
      layer_norm_backward(c.final_ln, store.value(p.final_g), dseq, store.grad(p.final_g), store.grad(p.final_b));
  dx = run_blocks_backward(store, p.blocks, c.blocks, std::move(dx));
  Tensor& gemb = store.grad(p.emb);
  for (std::size_t i = 0; i < c.ids.size(); ++i) {
    auto dst = gemb.row(static_cast<std::size_t>(c.ids[i]));
    auto src = dx.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
}

// Masked reconstruction pretext: masked frames are zeroed (masked tokens
// become [UNK]) and a throwaway projection learns to restore them.
struct PretrainConfig {
  double mask_prob = 0.15;
  std::size_t steps = 0;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t eval_items = 16;
};

struct PretrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> curve;  // per-step training loss
};

namespace detail {

inline constexpr std::size_t kFramesPerOutput = 4;

struct MaskedFrames {
  Tensor input;
  std::vector<bool> masked;
};

inline MaskedFrames mask_frames(const Tensor& frames, double prob, Rng& rng) {
  MaskedFrames m{frames, std::vector<bool>(frames.rows(), false)};
  bool any = false;
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    if (rng.bernoulli(prob)) {
      m.masked[t] = true;
      any = true;
    }
  }
  if (!any) m.masked[rng.below(frames.rows())] = true;
  for (std::size_t t = 0; t < frames.rows(); ++t)
    if (m.masked[t]) std::fill(m.input.row(t).begin(), m.input.row(t).end(), 0.0);
  return m;
}

// Mean squared error over masked frames; the head maps each output position
// to the 4 frames it downsamples. Accumulates grads when `grads` is set.
inline double frame_reconstruction_loss(ParamStore& store, const SpeechEncoderParams& p, ParamId head_w,
                                        ParamId head_b, const Tensor& target, const MaskedFrames& m, bool grads) {
  SpeechEncoderCache cache;
  auto enc = encode_speech(store, p, m.input, {}, grads ? &cache : nullptr);
  const Tensor pred = linear(enc.seq, store.value(head_w), store.value(head_b));
  const std::size_t d_in = target.cols();
  std::size_t count = 0;
  for (bool b : m.masked) count += b;
  const double norm = 1.0 / static_cast<double>(count * d_in);
  double loss = 0.0;
  Tensor dpred(pred.shape());
  for (std::size_t t = 0; t < target.rows(); ++t) {
    if (!m.masked[t]) continue;
    const std::size_t pos = t / kFramesPerOutput, slot = t % kFramesPerOutput;
    for (std::size_t c = 0; c < d_in; ++c) {
      const double diff = pred(pos, slot * d_in + c) - target(t, c);
      loss += diff * diff * norm;
      dpred(pos, slot * d_in + c) = 2.0 * diff * norm;
    }
  }
  if (grads) {
    accumulate_tn(store.grad(head_w), enc.seq, dpred);
    accumulate_column_sums(store.grad(head_b), dpred);
    encode_speech_backward(store, p, cache, matmul_nt(dpred, store.value(head_w)));
  }
  return loss;
}

}  // namespace detail

inline PretrainReport pretrain_masked_frames(ParamStore& store, const SpeechEncoderParams& p,
                                             std::span<const Tensor> corpus, const PretrainConfig& cfg) {
  if (corpus.empty()) throw DataError("pretraining corpus is empty");
  PretrainReport report;
  ParamStore work = store;
  Rng rng(cfg.seed);
  const ParamId head_w =
      work.add_normal("pretrain.frames.w", {p.d_model, detail::kFramesPerOutput * p.d_in}, rng, kDefaultInitStd);
  const ParamId head_b = work.add_constant("pretrain.frames.b", {detail::kFramesPerOutput * p.d_in}, 0.0);

  const std::size_t n_eval = std::min(cfg.eval_items, corpus.size());
  std::vector<detail::MaskedFrames> eval_set;
  Rng eval_rng(cfg.seed ^ 0x5eedULL);
  for (std::size_t i = 0; i < n_eval; ++i) eval_set.push_back(detail::mask_frames(corpus[i], cfg.mask_prob, eval_rng));
  auto evaluate = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < n_eval; ++i)
      total += detail::frame_reconstruction_loss(work, p, head_w, head_b, corpus[i], eval_set[i], false);
    return total / static_cast<double>(n_eval);
  };

  report.initial_loss = evaluate();
  if (cfg.steps == 0) {
    report.final_loss = report.initial_loss;
    return report;
  }
  AdamState adam;
  adam.lr = cfg.lr;
  work.zero_grad();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Tensor& target = corpus[rng.below(corpus.size())];
    const auto masked = detail::mask_frames(target, cfg.mask_prob, rng);
    report.curve.push_back(detail::frame_reconstruction_loss(work, p, head_w, head_b, target, masked, true));
    adam_step(work, adam);
  }
  report.final_loss = evaluate();
  for (std::size_t i = 0; i < store.size(); ++i) store.value(ParamId{i}) = work.value(ParamId{i});
  return report;
}

namespace detail {

inline double token_reconstruction_loss(ParamStore& store, const TextEncoderParams& p, ParamId head_w, ParamId head_b,
                                        const std::vector<TokenId>& target, const std::vector<TokenId>& input,
                                        bool grads) {
  TextEncoderCache cache;
  auto enc = encode_text(store, p, input, {}, grads ? &cache : nullptr);
  const Tensor logits = linear(enc.seq, store.value(head_w), store.value(head_b));
  const Tensor probs = softmax_rows(logits);
  std::size_t count = 0;
  for (std::size_t i = 0; i < input.size(); ++i) count += input[i] != target[i];
  double loss = 0.0;
  Tensor dlogits(logits.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (input[i] == target[i]) continue;
    const auto y = static_cast<std::size_t>(target[i]);
    loss -= std::log(probs(i, y)) / static_cast<double>(count);
    for (std::size_t j = 0; j < probs.cols(); ++j)
      dlogits(i, j) = (probs(i, j) - (j == y ? 1.0 : 0.0)) / static_cast<double>(count);
  }
  if (grads) {
    accumulate_tn(store.grad(head_w), enc.seq, dlogits);
    accumulate_column_sums(store.grad(head_b), dlogits);
    encode_text_backward(store, p, cache, matmul_nt(dlogits, store.value(head_w)));
  }
  return loss;
}

// Replaces non-[CLS] tokens with [UNK]; at least one position is masked
// whenever the sequence has a maskable token.
inline std::vector<TokenId> mask_tokens(const std::vector<TokenId>& ids, double prob, Rng& rng) {
  std::vector<TokenId> out = ids;
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] != Vocab::kCls && ids[i] != Vocab::kUnk) maskable.push_back(i);
  bool any = false;
  for (std::size_t i : maskable)
    if (rng.bernoulli(prob)) {
      out[i] = Vocab::kUnk;
      any = true;
    }
  if (!any && !maskable.empty()) out[maskable[rng.below(maskable.size())]] = Vocab::kUnk;
  return out;
}

}  // namespace detail

inline PretrainReport pretrain_masked_frames(ParamStore& store, const TextEncoderParams& p,
                                             std::span<const std::vector<TokenId>> corpus,
                                             const PretrainConfig& cfg) {
  if (corpus.empty()) throw DataError("pretraining corpus is empty");
  PretrainReport report;
  ParamStore work = store;
  Rng rng(cfg.seed);
  const ParamId head_w = work.add_normal("pretrain.tokens.w", {p.d_model, p.vocab_size}, rng, kDefaultInitStd);
  const ParamId head_b = work.add_constant("pretrain.tokens.b", {p.vocab_size}, 0.0);

  const std::size_t n_eval = std::min(cfg.eval_items, corpus.size());
  std::vector<std::vector<TokenId>> eval_inputs;
  Rng eval_rng(cfg.seed ^ 0x5eedULL);
  for (std::size_t i = 0; i < n_eval; ++i) eval_inputs.push_back(detail::mask_tokens(corpus[i], cfg.mask_prob, eval_rng));
  auto evaluate = [&] {
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < n_eval; ++i) {
      if (eval_inputs[i] == corpus[i]) continue;
      total += detail::token_reconstruction_loss(work, p, head_w, head_b, corpus[i], eval_inputs[i], false);
      ++used;
    }
    return used ? total / static_cast<double>(used) : 0.0;
  };

  report.initial_loss = evaluate();
  if (cfg.steps == 0) {
    report.final_loss = report.initial_loss;
    return report;
  }
  AdamState adam;
  adam.lr = cfg.lr;
  work.zero_grad();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto& target = corpus[rng.below(corpus.size())];
    const auto input = detail::mask_tokens(target, cfg.mask_prob, rng);
    report.curve.push_back(detail::token_reconstruction_loss(work, p, head_w, head_b, target, input, true));
    adam_step(work, adam);
  }
  report.final_loss = evaluate();
  for (std::size_t i = 0; i < store.size(); ++i) store.value(ParamId{i}) = work.value(ParamId{i});
  return report;
}

}  // namespace xstitch

// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-way multi-head cross-modal attention. Each stream first runs a
// self-attention block over itself (the target queries), then a cross block
// whose keys and values are the other encoder's original output:
//
//   text_fused   = Cross(Self(K_T), K_S)
//   speech_fused = Cross(Self(K_S), K_T)
//
// The two directions are independent of each other.
#pragma once

#include <string>

#include "xstitch/encoders.hpp"

namespace xstitch {

struct CrossStitchParams {
  BlockParams text_self;
  BlockParams speech_self;
  BlockParams text_from_speech;
  BlockParams speech_from_text;
};

inline CrossStitchParams make_cross_stitch(ParamStore& store, const std::string& prefix, std::size_t d_model,
                                           std::size_t heads, Rng& rng, double stddev = kDefaultInitStd) {
  CrossStitchParams p;
  p.text_self = make_block(store, prefix + ".text_self", d_model, heads, rng, stddev);
  p.speech_self = make_block(store, prefix + ".speech_self", d_model, heads, rng, stddev);
  p.text_from_speech = make_block(store, prefix + ".text_from_speech", d_model, heads, rng, stddev);
  p.speech_from_text = make_block(store, prefix + ".speech_from_text", d_model, heads, rng, stddev);
  return p;
}

struct CrossStitchOutput {
  EncoderOutput text_fused;
  EncoderOutput speech_fused;
};

struct CrossStitchCache {
  BlockCache text_self, text_cross, speech_self, speech_cross;
};

inline CrossStitchOutput cross_stitch(const ParamStore& store, const EncoderOutput& k_s, const EncoderOutput& k_t,
                                      const CrossStitchParams& p, CrossStitchCache* cache = nullptr) {
  const std::size_t d = p.text_self.d_model();
  if (k_s.seq.cols() != d || k_t.seq.cols() != d)
    throw DimensionError("cross-stitch expects width " + std::to_string(d) + ", got speech " +
                         shape_string(k_s.seq.shape()) + " and text " + shape_string(k_t.seq.shape()));
  const std::size_t ts = k_s.length(), tt = k_t.length();

  CrossStitchOutput out;
  Tensor t_self = self_attention_block(store, p.text_self, k_t.seq, AttentionMask::from_keys(tt, k_t.pad_mask),
                                       cache ? &cache->text_self : nullptr);
  out.text_fused.seq = cross_attention_block(store, p.text_from_speech, t_self, k_s.seq,
                                             AttentionMask::from_keys(tt, k_s.pad_mask),
                                             cache ? &cache->text_cross : nullptr);
  out.text_fused.pad_mask = k_t.pad_mask;

  Tensor s_self = self_attention_block(store, p.speech_self, k_s.seq, AttentionMask::from_keys(ts, k_s.pad_mask),
                                       cache ? &cache->speech_self : nullptr);
  out.speech_fused.seq = cross_attention_block(store, p.speech_from_text, s_self, k_t.seq,
                                               AttentionMask::from_keys(ts, k_t.pad_mask),
                                               cache ? &cache->speech_cross : nullptr);
  out.speech_fused.pad_mask = k_s.pad_mask;
  return out;
}

struct CrossStitchGrads {
  Tensor d_speech, d_text;
};

// Either upstream gradient may be empty when that stream feeds no loss.
inline CrossStitchGrads cross_stitch_backward(ParamStore& store, const CrossStitchParams& p, const CrossStitchCache& c,
                                              const Tensor& d_text_fused, const Tensor& d_speech_fused,
                                              std::size_t speech_len, std::size_t text_len) {
  const std::size_t d = p.text_self.d_model();
  CrossStitchGrads g{Tensor({speech_len, d}), Tensor({text_len, d})};
  if (!d_text_fused.empty()) {
    auto cg = cross_attention_block_backward(store, p.text_from_speech, c.text_cross, d_text_fused);
    add_inplace(g.d_speech, cg.d_kv_stream);
    add_inplace(g.d_text, self_attention_block_backward(store, p.text_self, c.text_self, cg.d_q_stream));
  }
  if (!d_speech_fused.empty()) {
    auto cg = cross_attention_block_backward(store, p.speech_from_text, c.speech_cross, d_speech_fused);
    add_inplace(g.d_text, cg.d_kv_stream);
    add_inplace(g.d_speech, self_attention_block_backward(store, p.speech_self, c.speech_self, cg.d_q_stream));
  }
  return g;
}

enum class AttentionDirection { text_to_speech, speech_to_text };

// Head-averaged cross-attention weights: rows are queries of the first
// modality named, columns keys of the second.
inline Tensor attention_map(const ParamStore& store, const EncoderOutput& k_s, const EncoderOutput& k_t,
                            const CrossStitchParams& p, AttentionDirection direction) {
  CrossStitchCache cache;
  cross_stitch(store, k_s, k_t, p, &cache);
  return mean_head_weights(direction == AttentionDirection::text_to_speech ? cache.text_cross : cache.speech_cross);
}

}  // namespace xstitch

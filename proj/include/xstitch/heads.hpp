// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xstitch/crossstitch.hpp"

namespace xstitch {

// xse: pooled cross-stitch streams; se_te: pooled encoder outputs
// concatenated; se / te: a single pooled encoder.
enum class FusionMode { xse, se_te, se, te };

inline std::string_view to_string(FusionMode m) {
  switch (m) {
    case FusionMode::xse: return "xse";
    case FusionMode::se_te: return "se-te";
    case FusionMode::se: return "se";
    case FusionMode::te: return "te";
  }
  return "?";
}

inline FusionMode parse_fusion(std::string_view s) {
  if (s == "xse") return FusionMode::xse;
  if (s == "se-te" || s == "se-te-concat") return FusionMode::se_te;
  if (s == "se" || s == "se-only") return FusionMode::se;
  if (s == "te" || s == "te-only") return FusionMode::te;
  throw ConfigError("unknown fusion mode: " + std::string(s));
}

inline bool fusion_concatenates(FusionMode m) { return m == FusionMode::xse || m == FusionMode::se_te; }

inline constexpr int kIgnoreLabel = -1;

struct TagHead {
  std::size_t n_tags = 0;
  ParamId w, b;
};

inline TagHead make_tag_head(ParamStore& store, const std::string& prefix, std::size_t d_model, std::size_t n_tags,
                             Rng& rng, double stddev = kDefaultInitStd) {
  if (n_tags < 2) throw ConfigError("a tagging head needs at least two tags");
  return {n_tags, store.add_normal(prefix + ".w", {d_model, n_tags}, rng, stddev),
          store.add_constant(prefix + ".b", {n_tags}, 0.0)};
}

inline Tensor tag_logits(const ParamStore& store, const EncoderOutput& text_fused, const TagHead& head) {
  const Tensor& w = store.value(head.w);
  if (text_fused.seq.cols() != w.rows())
    throw ConfigError("tag head expects width " + std::to_string(w.rows()) + ", got " +
                      std::to_string(text_fused.seq.cols()));
  return linear(text_fused.seq, w, store.value(head.b));
}

inline Tensor tag_logits_backward(ParamStore& store, const TagHead& head, const Tensor& input, const Tensor& dlogits) {
  accumulate_tn(store.grad(head.w), input, dlogits);
  accumulate_column_sums(store.grad(head.b), dlogits);
  return matmul_nt(dlogits, store.value(head.w));
}

enum class PoolMode { cls, max };

struct Pooled {
  Tensor vec;                     // [d]
  std::vector<std::size_t> rows;  // source row of every coordinate
};

// cls: row 0. max: per-coordinate maximum over real positions only.
inline Pooled pool(const EncoderOutput& enc, PoolMode mode) {
  const std::size_t d = enc.seq.cols();
  if (enc.pad_mask.size() != enc.seq.rows()) throw DimensionError("pad mask length does not match sequence length");
  if (count_real(enc.pad_mask) == 0) throw DataError("cannot pool a sequence without real positions");
  Pooled out{Tensor({d}), std::vector<std::size_t>(d, 0)};
  if (mode == PoolMode::cls) {
    if (!enc.pad_mask[0]) throw DataError("cls pooling needs a real position 0");
    std::copy_n(enc.seq.row(0).data(), d, out.vec.data());
    return out;
  }
  bool first = true;
  for (std::size_t t = 0; t < enc.seq.rows(); ++t) {
    if (!enc.pad_mask[t]) continue;
    auto r = enc.seq.row(t);
    for (std::size_t j = 0; j < d; ++j)
      if (first || r[j] > out.vec[j]) {
        out.vec[j] = r[j];
        out.rows[j] = t;
      }
    first = false;
  }
  return out;
}

inline Tensor pool_backward(const Pooled& pooled, const Tensor& dvec, std::size_t length) {
  Tensor dseq({length, pooled.vec.size()});
  for (std::size_t j = 0; j < pooled.vec.size(); ++j) dseq(pooled.rows[j], j) += dvec[j];
  return dseq;
}

enum class FusionPath { concat, speech_duplicated, text_duplicated };

inline std::string_view to_string(FusionPath p) {
  switch (p) {
    case FusionPath::concat: return "concat";
    case FusionPath::speech_duplicated: return "speech-only-fallback";
    case FusionPath::text_duplicated: return "text-only-fallback";
  }
  return "?";
}

struct FusedVector {
  Tensor vec;
  FusionPath path = FusionPath::concat;
};

// [speech ; text]. With one modality missing, the available vector fills
// both halves so the classifier width never changes.
inline FusedVector fuse_shallow(const std::optional<Tensor>& pooled_s, const std::optional<Tensor>& pooled_t) {
  if (!pooled_s && !pooled_t) throw DataError("shallow fusion needs at least one modality");
  if (pooled_s && pooled_t && pooled_s->size() != pooled_t->size())
    throw DimensionError("pooled speech and text widths differ");
  const Tensor& first = pooled_s ? *pooled_s : *pooled_t;
  const Tensor& second = pooled_t ? *pooled_t : *pooled_s;
  const std::size_t d = first.size();
  FusedVector f{Tensor({2 * d}), FusionPath::concat};
  std::copy_n(first.data(), d, f.vec.data());
  std::copy_n(second.data(), d, f.vec.data() + d);
  if (!pooled_s) f.path = FusionPath::text_duplicated;
  if (!pooled_t) f.path = FusionPath::speech_duplicated;
  return f;
}

// Gradients for (speech, text); the absent side stays empty.
inline std::pair<Tensor, Tensor> fuse_shallow_backward(FusionPath path, const Tensor& dvec) {
  const std::size_t d = dvec.size() / 2;
  Tensor a({d}), b({d});
  std::copy_n(dvec.data(), d, a.data());
  std::copy_n(dvec.data() + d, d, b.data());
  switch (path) {
    case FusionPath::concat: return {std::move(a), std::move(b)};
    case FusionPath::speech_duplicated: add_inplace(a, b); return {std::move(a), Tensor()};
    case FusionPath::text_duplicated: add_inplace(b, a); return {Tensor(), std::move(b)};
  }
  return {};
}

struct UttHead {
  FusionMode mode = FusionMode::xse;
  std::size_t n_classes = 0;
  std::size_t d_fused = 0;
  ParamId w, b;
};

inline UttHead make_utt_head(ParamStore& store, const std::string& prefix, FusionMode mode, std::size_t d_model,
                             std::size_t n_classes, Rng& rng, double stddev = kDefaultInitStd) {
  if (n_classes < 2) throw ConfigError("an utterance head needs at least two classes");
  UttHead h;
  h.mode = mode;
  h.n_classes = n_classes;
  h.d_fused = fusion_concatenates(mode) ? 2 * d_model : d_model;
  h.w = store.add_normal(prefix + ".w", {h.d_fused, n_classes}, rng, stddev);
  h.b = store.add_constant(prefix + ".b", {n_classes}, 0.0);
  return h;
}

// Intent and entity projections reading one shared fused vector.
struct MultiHeadedClassifier {
  FusionMode mode = FusionMode::xse;
  std::size_t d_fused = 0;
  UttHead intent;
  UttHead entity;
};

inline MultiHeadedClassifier make_multi_headed_classifier(ParamStore& store, const std::string& prefix,
                                                          FusionMode mode, std::size_t d_model,
                                                          std::size_t n_intents, std::size_t n_entities, Rng& rng,
                                                          double stddev = kDefaultInitStd) {
  MultiHeadedClassifier c;
  c.mode = mode;
  c.intent = make_utt_head(store, prefix + ".intent", mode, d_model, n_intents, rng, stddev);
  c.entity = make_utt_head(store, prefix + ".entity", mode, d_model, n_entities, rng, stddev);
  c.d_fused = c.intent.d_fused;
  return c;
}

// Logits [1 x C] for one fused vector.
inline Tensor classify_utterance(const ParamStore& store, const Tensor& fused, const UttHead& head) {
  if (fused.size() != head.d_fused)
    throw ConfigError("fused vector width " + std::to_string(fused.size()) + " does not match " +
                      std::string(to_string(head.mode)) + " head width " + std::to_string(head.d_fused));
  return linear(fused.reshaped({1, fused.size()}), store.value(head.w), store.value(head.b));
}

inline std::pair<Tensor, Tensor> classify_utterance(const ParamStore& store, const Tensor& fused,
                                                    const MultiHeadedClassifier& head) {
  return {classify_utterance(store, fused, head.intent), classify_utterance(store, fused, head.entity)};
}

// XSE: cls-pooled text stream and max-pooled speech stream, concatenated.
inline FusedVector xse_fused_vector(const CrossStitchOutput& x) {
  return fuse_shallow(pool(x.speech_fused, PoolMode::max).vec, pool(x.text_fused, PoolMode::cls).vec);
}

inline Tensor classify_utterance(const ParamStore& store, const CrossStitchOutput& x, const UttHead& head) {
  if (head.mode != FusionMode::xse)
    throw ConfigError("cross-stitch output requires an xse head, got " + std::string(to_string(head.mode)));
  return classify_utterance(store, xse_fused_vector(x).vec, head);
}

inline std::pair<Tensor, Tensor> classify_utterance(const ParamStore& store, const CrossStitchOutput& x,
                                                    const MultiHeadedClassifier& head) {
  if (head.mode != FusionMode::xse)
    throw ConfigError("cross-stitch output requires an xse head, got " + std::string(to_string(head.mode)));
  return classify_utterance(store, xse_fused_vector(x).vec, head);
}

// Returns dL/dfused for logits = fused * W + b.
inline Tensor classify_utterance_backward(ParamStore& store, const UttHead& head, const Tensor& fused,
                                          const Tensor& dlogits) {
  const Tensor x = fused.reshaped({1, fused.size()});
  accumulate_tn(store.grad(head.w), x, dlogits);
  accumulate_column_sums(store.grad(head.b), dlogits);
  return matmul_nt(dlogits, store.value(head.w)).reshaped({fused.size()});
}

struct CrossEntropy {
  double loss = 0.0;   // mean over counted rows
  Tensor grad;         // dloss/dlogits
  std::size_t count = 0;
};

// Mean negative log-likelihood over rows whose label is not kIgnoreLabel.
inline CrossEntropy cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows())
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows()) + " rows");
  CrossEntropy ce;
  ce.grad = Tensor(logits.shape());
  for (int y : labels) {
    if (y == kIgnoreLabel) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols())
      throw DataError("label " + std::to_string(y) + " outside " + std::to_string(logits.cols()) + " classes");
    ++ce.count;
  }
  if (ce.count == 0) throw DataError("cross_entropy: every row is ignored");
  const double inv = 1.0 / static_cast<double>(ce.count);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    auto r = logits.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double v : r) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    const auto y = static_cast<std::size_t>(labels[i]);
    ce.loss += (lse - r[y]) * inv;
    auto g = ce.grad.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) g[j] = (std::exp(r[j] - lse) - (j == y ? 1.0 : 0.0)) * inv;
  }
  return ce;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace xstitch

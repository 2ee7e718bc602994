// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Task models: encoders, optional cross-stitch, and the task head, with a
// per-utterance forward/backward and task-level evaluation.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "xstitch/crossstitch.hpp"
#include "xstitch/data.hpp"
#include "xstitch/heads.hpp"
#include "xstitch/metrics.hpp"
#include "xstitch/synth.hpp"

namespace xstitch {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t heads = 8;
  std::size_t speech_layers = 4;
  std::size_t text_layers = 4;
  std::size_t d_in = kFrameChannels;
  std::size_t k_max = kDefaultMaxRelativeDistance;
  std::size_t vocab_size = 0;  // cap on the vocabulary built from training data; 0 = no cap
  double init_std = kDefaultInitStd;
  Task task = Task::punct;
  FusionMode fusion = FusionMode::xse;

  bool uses_speech() const { return fusion != FusionMode::te; }
  bool uses_text() const { return fusion != FusionMode::se; }

  void validate() const {
    check_heads(d_model, heads);
    if (speech_layers == 0 || text_layers == 0) throw ConfigError("encoders need at least one layer");
    if (d_in == 0) throw ConfigError("d_in must be positive");
    if (init_std <= 0) throw ConfigError("init_std must be positive");
    if (is_tagging(task) && !(fusion == FusionMode::xse || fusion == FusionMode::te))
      throw ConfigError("tagging task " + std::string(to_string(task)) + " needs the text stream; use xse or te, not " +
                        std::string(to_string(fusion)));
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"heads", c.heads},
          {"speech_layers", c.speech_layers},
          {"text_layers", c.text_layers},
          {"d_in", c.d_in},
          {"k_max", c.k_max},
          {"vocab_size", c.vocab_size},
          {"init_std", c.init_std},
          {"task", std::string(to_string(c.task))},
          {"fusion", std::string(to_string(c.fusion))}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.d_model = j.at("d_model").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.speech_layers = j.at("speech_layers").get<std::size_t>();
    c.text_layers = j.at("text_layers").get<std::size_t>();
    c.d_in = j.at("d_in").get<std::size_t>();
    c.k_max = j.at("k_max").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.init_std = j.at("init_std").get<double>();
    c.task = parse_task(j.at("task").get<std::string>());
    c.fusion = parse_fusion(j.at("fusion").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

struct Model {
  ModelConfig config;
  Vocab vocab;
  TaskSpec spec;
  ParamStore store;
  std::optional<SpeechEncoderParams> speech;
  std::optional<TextEncoderParams> text;
  std::optional<CrossStitchParams> xstitch;
  std::optional<TagHead> tag_head;
  std::optional<UttHead> utt_head;
  std::optional<MultiHeadedClassifier> mhc;
};

inline constexpr std::string_view kSpeechPrefix = "speech.";

// Components are created in the order speech, text, cross-stitch, head so
// that a fixed seed yields a fixed parameter set for each configuration.
inline Model make_model(const ModelConfig& cfg, Vocab vocab, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.config = cfg;
  m.vocab = std::move(vocab);
  m.spec = task_spec(cfg.task);
  Rng rng(seed);
  const double s = cfg.init_std;
  if (cfg.uses_speech())
    m.speech = make_speech_encoder(m.store, "speech", cfg.d_in, cfg.d_model, cfg.heads, cfg.speech_layers, rng, s);
  if (cfg.uses_text())
    m.text = make_text_encoder(m.store, "text", m.vocab.size(), cfg.d_model, cfg.heads, cfg.text_layers, cfg.k_max,
                               rng, s);
  if (cfg.fusion == FusionMode::xse) m.xstitch = make_cross_stitch(m.store, "xstitch", cfg.d_model, cfg.heads, rng, s);
  if (is_tagging(cfg.task))
    m.tag_head = make_tag_head(m.store, "head.tags", cfg.d_model, m.spec.n_outputs, rng, s);
  else if (cfg.task == Task::intent)
    m.mhc = make_multi_headed_classifier(m.store, "head", cfg.fusion, cfg.d_model, m.spec.n_outputs,
                                         m.spec.n_outputs2, rng, s);
  else
    m.utt_head = make_utt_head(m.store, "head.utt", cfg.fusion, cfg.d_model, m.spec.n_outputs, rng, s);
  return m;
}

// One utterance, unpadded: frames (absent for text-only samples) and token
// ids with [CLS] at position 0.
struct Example {
  std::optional<Tensor> frames;
  std::vector<TokenId> ids;
};

inline Example make_example(const Utterance& u, const Vocab& vocab) {
  Example ex;
  ex.frames = u.frames;
  ex.ids.reserve(u.tokens.size() + 1);
  ex.ids.push_back(Vocab::kCls);
  for (const auto& t : u.tokens) ex.ids.push_back(vocab.id(t));
  return ex;
}

// Member b of a padded batch, trimmed to its real extent.
inline Example example_of(const Batch& batch, std::size_t b) {
  Example ex;
  if (batch.has_speech[b]) {
    const std::size_t t = count_real(batch.frame_mask[b]);
    Tensor f({t, batch.d_in});
    std::copy_n(batch.frames.data() + b * batch.frame_width * batch.d_in, t * batch.d_in, f.data());
    ex.frames = std::move(f);
  }
  const auto row = batch.tokens(b);
  ex.ids.assign(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(count_real(batch.token_mask[b])));
  return ex;
}

struct ForwardState {
  bool has_speech = false;
  SpeechEncoderCache speech_cache;
  TextEncoderCache text_cache;
  CrossStitchCache xs_cache;
  BlockCache text_self_only;  // xse without speech: text self block alone
  std::optional<EncoderOutput> k_s, k_t;
  std::optional<CrossStitchOutput> fused_streams;
  EncoderOutput tag_input;  // the stream fed to the tagging head
  Pooled pooled_s, pooled_t;
  bool pooled_s_present = false, pooled_t_present = false;
  FusedVector fused;
  Tensor utt_vec;  // vector read by the utterance head
  Tensor logits;   // [T x n_tags] or [1 x C]
  Tensor logits2;  // entity logits for the intent task
};

namespace detail {

inline Tensor utterance_vector(const Model& m, ForwardState& st) {
  const std::size_t d = m.config.d_model;
  switch (m.config.fusion) {
    case FusionMode::xse: {
      if (st.fused_streams) {
        st.pooled_s = pool(st.fused_streams->speech_fused, PoolMode::max);
        st.pooled_t = pool(st.fused_streams->text_fused, PoolMode::cls);
        st.pooled_s_present = st.pooled_t_present = true;
      } else {
        st.pooled_t = pool(st.tag_input, PoolMode::cls);
        st.pooled_t_present = true;
      }
      break;
    }
    case FusionMode::se_te:
      if (st.k_s) {
        st.pooled_s = pool(*st.k_s, PoolMode::max);
        st.pooled_s_present = true;
      }
      st.pooled_t = pool(*st.k_t, PoolMode::cls);
      st.pooled_t_present = true;
      break;
    case FusionMode::se:
      if (st.k_s) {
        st.pooled_s = pool(*st.k_s, PoolMode::max);
        st.pooled_s_present = true;
        return st.pooled_s.vec;
      }
      return Tensor({d});
    case FusionMode::te:
      st.pooled_t = pool(*st.k_t, PoolMode::cls);
      st.pooled_t_present = true;
      return st.pooled_t.vec;
  }
  st.fused = fuse_shallow(st.pooled_s_present ? std::optional<Tensor>(st.pooled_s.vec) : std::nullopt,
                          st.pooled_t_present ? std::optional<Tensor>(st.pooled_t.vec) : std::nullopt);
  return st.fused.vec;
}

}  // namespace detail

// Forward pass for one example. With `keep_cache` false the caches stay
// empty and the state only carries outputs.
inline ForwardState forward(const Model& m, const Example& ex, bool keep_cache = true) {
  ForwardState st;
  st.has_speech = ex.frames.has_value();
  if (m.speech && ex.frames)
    st.k_s = encode_speech(m.store, *m.speech, *ex.frames, {}, keep_cache ? &st.speech_cache : nullptr);
  if (m.text) st.k_t = encode_text(m.store, *m.text, ex.ids, {}, keep_cache ? &st.text_cache : nullptr);

  if (m.config.fusion == FusionMode::xse) {
    if (st.k_s) {
      st.fused_streams = cross_stitch(m.store, *st.k_s, *st.k_t, *m.xstitch, keep_cache ? &st.xs_cache : nullptr);
      st.tag_input = st.fused_streams->text_fused;
    } else {
      st.tag_input.seq = self_attention_block(m.store, m.xstitch->text_self,
                                              st.k_t->seq, AttentionMask::full(st.k_t->length(), st.k_t->length()),
                                              keep_cache ? &st.text_self_only : nullptr);
      st.tag_input.pad_mask = st.k_t->pad_mask;
    }
  } else if (st.k_t) {
    st.tag_input = *st.k_t;
  }

  if (m.tag_head) {
    st.logits = tag_logits(m.store, st.tag_input, *m.tag_head);
    return st;
  }
  st.utt_vec = detail::utterance_vector(m, st);
  if (m.mhc) {
    std::tie(st.logits, st.logits2) = classify_utterance(m.store, st.utt_vec, *m.mhc);
  } else {
    st.logits = classify_utterance(m.store, st.utt_vec, *m.utt_head);
  }
  return st;
}

// Backpropagates dlogits (and dlogits2 for the intent task) into the store.
// With `skip_speech` the speech encoder's backward pass is not run.
inline void backward(Model& m, const ForwardState& st, const Tensor& dlogits, const Tensor& dlogits2,
                     bool skip_speech) {
  ParamStore& store = m.store;
  Tensor d_ks, d_kt;  // upstream gradients for the encoder outputs
  Tensor d_text_stream, d_speech_stream;

  if (m.tag_head) {
    d_text_stream = tag_logits_backward(store, *m.tag_head, st.tag_input.seq, dlogits);
  } else {
    Tensor dv;
    if (m.mhc) {
      dv = classify_utterance_backward(store, m.mhc->intent, st.utt_vec, dlogits);
      add_inplace(dv, classify_utterance_backward(store, m.mhc->entity, st.utt_vec, dlogits2));
    } else {
      dv = classify_utterance_backward(store, *m.utt_head, st.utt_vec, dlogits);
    }
    Tensor dps, dpt;
    if (fusion_concatenates(m.config.fusion)) {
      std::tie(dps, dpt) = fuse_shallow_backward(st.fused.path, dv);
    } else if (m.config.fusion == FusionMode::se) {
      if (st.pooled_s_present) dps = dv;
    } else {
      dpt = dv;
    }
    if (m.config.fusion == FusionMode::xse) {
      if (!dpt.empty()) d_text_stream = pool_backward(st.pooled_t, dpt, st.tag_input.length());
      if (!dps.empty()) d_speech_stream = pool_backward(st.pooled_s, dps, st.fused_streams->speech_fused.length());
    } else {
      if (!dps.empty()) d_ks = pool_backward(st.pooled_s, dps, st.k_s->length());
      if (!dpt.empty()) d_kt = pool_backward(st.pooled_t, dpt, st.k_t->length());
    }
  }

  if (m.config.fusion == FusionMode::xse) {
    if (st.fused_streams) {
      auto g = cross_stitch_backward(store, *m.xstitch, st.xs_cache, d_text_stream, d_speech_stream,
                                     st.k_s->length(), st.k_t->length());
      d_ks = std::move(g.d_speech);
      d_kt = std::move(g.d_text);
    } else {
      d_kt = self_attention_block_backward(store, m.xstitch->text_self, st.text_self_only, d_text_stream);
    }
  } else if (m.tag_head) {
    d_kt = std::move(d_text_stream);
  }

  if (!d_kt.empty()) encode_text_backward(store, *m.text, st.text_cache, d_kt);
  if (!d_ks.empty() && !skip_speech) encode_speech_backward(store, *m.speech, st.speech_cache, d_ks);
}

// Per-utterance targets in the shape the loss expects.
struct Targets {
  std::vector<int> tags;  // [T] including [CLS], which is ignored
  int label = kIgnoreLabel;
  int label2 = kIgnoreLabel;
};

inline Targets targets_of(const Utterance& u) {
  Targets t;
  if (u.tags) {
    t.tags.push_back(kIgnoreLabel);
    t.tags.insert(t.tags.end(), u.tags->begin(), u.tags->end());
  }
  t.label = u.label.value_or(kIgnoreLabel);
  t.label2 = u.label2.value_or(kIgnoreLabel);
  return t;
}

inline Targets targets_of(const Batch& batch, std::size_t b) {
  Targets t;
  const auto row = batch.tag_row(b);
  t.tags.assign(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(count_real(batch.token_mask[b])));
  t.label = batch.labels[b];
  t.label2 = batch.labels2[b];
  return t;
}

inline std::size_t counted_tags(const Targets& t) {
  return static_cast<std::size_t>(std::count_if(t.tags.begin(), t.tags.end(), [](int y) { return y != kIgnoreLabel; }));
}

struct BatchLoss {
  double loss = 0.0;
  std::size_t items = 0;  // tokens for tagging, utterances otherwise
};

// Loss over a batch: tagging averages NLL over every counted token in the
// batch; classification averages over utterances (intent adds the entity
// term). Gradients accumulate into the store when `grads` is true.
inline BatchLoss batch_loss(Model& m, const Batch& batch, bool grads, bool skip_speech = false) {
  BatchLoss out;
  std::vector<Targets> targets;
  for (std::size_t b = 0; b < batch.size; ++b) {
    targets.push_back(targets_of(batch, b));
    out.items += is_tagging(m.config.task) ? counted_tags(targets.back()) : 1;
  }
  if (out.items == 0) throw DataError("batch has nothing to score");
  const double scale_all = 1.0 / static_cast<double>(out.items);
  for (std::size_t b = 0; b < batch.size; ++b) {
    const Example ex = example_of(batch, b);
    const ForwardState st = forward(m, ex, grads);
    const Targets& t = targets[b];
    Tensor g1, g2;
    if (is_tagging(m.config.task)) {
      const std::size_t n = counted_tags(t);
      if (n == 0) continue;
      auto ce = cross_entropy(st.logits, t.tags);
      const double w = static_cast<double>(n) * scale_all;
      out.loss += ce.loss * w;
      g1 = std::move(ce.grad);
      scale_inplace(g1, w);
    } else {
      const int y1 = t.label;
      auto ce = cross_entropy(st.logits, std::span<const int>(&y1, 1));
      out.loss += ce.loss * scale_all;
      g1 = std::move(ce.grad);
      scale_inplace(g1, scale_all);
      if (m.mhc) {
        const int y2 = t.label2;
        auto ce2 = cross_entropy(st.logits2, std::span<const int>(&y2, 1));
        out.loss += ce2.loss * scale_all;
        g2 = std::move(ce2.grad);
        scale_inplace(g2, scale_all);
      }
    }
    if (grads) backward(m, st, g1, g2, skip_speech);
  }
  return out;
}

struct Prediction {
  std::vector<int> tags;  // one per input token (no [CLS])
  int label = kIgnoreLabel;
  int label2 = kIgnoreLabel;
  std::optional<FusionPath> path;
};

inline Prediction predict(const Model& m, const Example& ex) {
  const ForwardState st = forward(m, ex, false);
  Prediction p;
  if (m.tag_head) {
    for (std::size_t i = 1; i < st.logits.rows(); ++i) p.tags.push_back(static_cast<int>(argmax(st.logits.row(i))));
    return p;
  }
  p.label = static_cast<int>(argmax(st.logits.row(0)));
  if (m.mhc) p.label2 = static_cast<int>(argmax(st.logits2.row(0)));
  if (fusion_concatenates(m.config.fusion)) p.path = st.fused.path;
  return p;
}

inline Prediction predict(const Model& m, const Utterance& u) { return predict(m, make_example(u, m.vocab)); }

// Head-averaged cross-attention weights for one utterance (xse only).
inline std::pair<Tensor, Tensor> attention_maps(const Model& m, const Utterance& u) {
  if (!m.xstitch) throw ConfigError("attention maps need an xse model");
  const Example ex = make_example(u, m.vocab);
  if (!ex.frames) throw DataError("attention maps need speech frames for " + u.id);
  const auto ks = encode_speech(m.store, *m.speech, *ex.frames);
  const auto kt = encode_text(m.store, *m.text, ex.ids);
  return {attention_map(m.store, ks, kt, *m.xstitch, AttentionDirection::text_to_speech),
          attention_map(m.store, ks, kt, *m.xstitch, AttentionDirection::speech_to_text)};
}

// ---------------------------------------------------------------------------
// Evaluation

inline std::vector<Prediction> predict_all(const Model& m, std::span<const Utterance> utts) {
  std::vector<Prediction> out;
  out.reserve(utts.size());
  for (const auto& u : utts) out.push_back(predict(m, u));
  return out;
}

// Metrics JSON for a split. Keys per task:
//   punct: tags (per-tag report + macro_f1), tag_accuracy, ambiguous_accuracy
//   roles: token_error_rate, turns (P/R/F), neutral_token_error_rate
//   sentiment: accuracy, accuracy_full_modality, accuracy_text_only
//   intent: intent_accuracy, entity_accuracy, joint_accuracy
inline nlohmann::json evaluate(const Model& m, std::span<const Utterance> utts) {
  if (utts.empty()) throw DataError("cannot evaluate an empty split");
  const auto preds = predict_all(m, utts);
  nlohmann::json j;
  j["task"] = std::string(to_string(m.config.task));
  j["fusion"] = std::string(to_string(m.config.fusion));
  j["n"] = utts.size();
  switch (m.config.task) {
    case Task::punct: {
      std::vector<int> pred, gold, cue_pred, cue_gold;
      for (std::size_t i = 0; i < utts.size(); ++i) {
        const auto& g = *utts[i].tags;
        pred.insert(pred.end(), preds[i].tags.begin(), preds[i].tags.end());
        gold.insert(gold.end(), g.begin(), g.end());
        for (std::size_t c : utts[i].cues) {
          cue_pred.push_back(preds[i].tags[c]);
          cue_gold.push_back(g[c]);
        }
      }
      j["tags"] = to_json(per_tag_f1(pred, gold), m.spec.names);
      j["tag_accuracy"] = accuracy(pred, gold);
      j["ambiguous_tokens"] = cue_gold.size();
      j["ambiguous_accuracy"] = cue_gold.empty() ? 0.0 : accuracy(cue_pred, cue_gold);
      break;
    }
    case Task::roles: {
      std::vector<int> pred, gold, cue_pred, cue_gold;
      TurnReport turns;
      for (std::size_t i = 0; i < utts.size(); ++i) {
        const auto& g = *utts[i].tags;
        pred.insert(pred.end(), preds[i].tags.begin(), preds[i].tags.end());
        gold.insert(gold.end(), g.begin(), g.end());
        turns += turn_prf(segment_turns(preds[i].tags), segment_turns(g));
        for (std::size_t c : utts[i].cues) {
          cue_pred.push_back(preds[i].tags[c]);
          cue_gold.push_back(g[c]);
        }
      }
      j["tags"] = to_json(per_tag_f1(pred, gold), m.spec.names);
      j["token_error_rate"] = token_error_rate(pred, gold);
      j["turns"] = to_json(turns);
      j["neutral_tokens"] = cue_gold.size();
      j["neutral_token_error_rate"] = cue_gold.empty() ? 0.0 : token_error_rate(cue_pred, cue_gold);
      break;
    }
    case Task::sentiment: {
      std::vector<int> pred, gold, full_p, full_g, text_p, text_g;
      for (std::size_t i = 0; i < utts.size(); ++i) {
        pred.push_back(preds[i].label);
        gold.push_back(*utts[i].label);
        (utts[i].has_speech() ? full_p : text_p).push_back(preds[i].label);
        (utts[i].has_speech() ? full_g : text_g).push_back(*utts[i].label);
      }
      j["accuracy"] = accuracy(pred, gold);
      j["accuracy_full_modality"] = full_g.empty() ? 0.0 : accuracy(full_p, full_g);
      j["accuracy_text_only"] = text_g.empty() ? 0.0 : accuracy(text_p, text_g);
      j["text_only_samples"] = text_g.size();
      break;
    }
    case Task::intent: {
      std::vector<int> pi, gi, pe, ge;
      std::vector<std::pair<int, int>> pj, gj;
      for (std::size_t i = 0; i < utts.size(); ++i) {
        pi.push_back(preds[i].label);
        gi.push_back(*utts[i].label);
        pe.push_back(preds[i].label2);
        ge.push_back(*utts[i].label2);
        pj.emplace_back(preds[i].label, preds[i].label2);
        gj.emplace_back(*utts[i].label, *utts[i].label2);
      }
      j["intent_accuracy"] = accuracy(pi, gi);
      j["entity_accuracy"] = accuracy(pe, ge);
      j["joint_accuracy"] = joint_accuracy(pj, gj);
      break;
    }
  }
  return j;
}

// Early-stopping metric (higher is better): macro-F1 for tagging, accuracy
// for sentiment, joint accuracy for intent.
inline double selection_metric(const nlohmann::json& report) {
  const Task t = parse_task(report.at("task").get<std::string>());
  switch (t) {
    case Task::punct:
    case Task::roles: return report.at("tags").at("macro_f1").get<double>();
    case Task::sentiment: return report.at("accuracy").get<double>();
    case Task::intent: return report.at("joint_accuracy").get<double>();
  }
  return 0.0;
}

}  // namespace xstitch

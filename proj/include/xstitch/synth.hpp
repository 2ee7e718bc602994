// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic corpora whose labels depend partly on the frames. Frames have 8
// channels at a nominal 10 ms step, 4 frames per spoken word:
//   0-5  word-identity signature (fixed per word) plus noise
//   6    prosody: terminal rise/fall, arousal level, or an intent code
//   7    speaker timbre
#pragma once

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "xstitch/data.hpp"
#include "xstitch/metrics.hpp"
#include "xstitch/rng.hpp"

namespace xstitch {

inline constexpr std::size_t kFrameChannels = 8;
inline constexpr std::size_t kSignatureChannels = 6;
inline constexpr std::size_t kProsodyChannel = 6;
inline constexpr std::size_t kTimbreChannel = 7;
inline constexpr std::size_t kFramesPerWord = 4;
inline constexpr std::size_t kMinCorpusSize = 30;

inline constexpr double kSignatureNoise = 0.15;
inline constexpr double kChannelNoise = 0.1;

inline std::array<double, kSignatureChannels> word_signature(const std::string& word) {
  Rng rng(fnv1a(word));
  std::array<double, kSignatureChannels> sig;
  for (double& v : sig) v = rng.normal();
  return sig;
}

struct SpokenWord {
  std::string word;
  std::array<double, kFramesPerWord> prosody{};
  double timbre = 0.0;
};

inline Tensor synthesize_frames(const std::vector<SpokenWord>& words, Rng& rng,
                                double signature_noise = kSignatureNoise) {
  Tensor f({std::max<std::size_t>(1, words.size()) * kFramesPerWord, kFrameChannels});
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto sig = word_signature(words[w].word);
    for (std::size_t k = 0; k < kFramesPerWord; ++k) {
      auto row = f.row(w * kFramesPerWord + k);
      for (std::size_t c = 0; c < kSignatureChannels; ++c) row[c] = sig[c] + rng.normal(0.0, signature_noise);
      row[kProsodyChannel] = words[w].prosody[k] + rng.normal(0.0, kChannelNoise);
      row[kTimbreChannel] = words[w].timbre + rng.normal(0.0, kChannelNoise);
    }
  }
  return f;
}

inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

namespace synth {

inline std::string make_id(Task task, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return std::string(to_string(task)) + "-" + buf;
}

template <std::size_t N>
const char* pick(Rng& rng, const std::array<const char*, N>& bank) {
  return bank[rng.below(N)];
}

// ---- punctuation and capitalization -------------------------------------

inline const std::array<const char*, 10> kQuestions = {
    "what time is it", "where do you live",   "how are you",        "do you like music",
    "can you help me", "is it raining",       "did you see the film", "are you coming tonight",
    "why is the door open", "who called"};
inline const std::array<const char*, 10> kStatements = {
    "thank you",          "i understand",       "i like tea",       "we went home early",
    "the weather is nice today", "my brother lives here", "the train was late", "i need a new phone",
    "she reads every night", "it is time to go"};
// Declarative questions: identical wording with "." or "?".
inline const std::array<const char*, 10> kAmbiguous = {
    "you like coffee", "she is coming",    "they left already", "you are sure",
    "it is ready",     "he called you",    "we are done",       "the shop is closed",
    "you finished the report", "it works now"};
inline const std::array<const char*, 4> kAmbiguousSingle = {"really", "okay", "right", "seriously"};
inline const std::array<const char*, 5> kInterjections = {"well", "so", "yes", "no", "oh"};
inline const std::array<const char*, 4> kNames = {"john", "mary", "anna", "peter"};

inline constexpr std::array<double, kFramesPerWord> kRise = {0.5, 1.0, 1.5, 2.0};
inline constexpr std::array<double, kFramesPerWord> kFall = {-0.5, -1.0, -1.5, -2.0};

struct PunctSentence {
  std::string rich;
  std::size_t template_index = 0;  // into kAmbiguous then kAmbiguousSingle when ambiguous
  bool ambiguous = false;
  bool question = false;
};

inline bool is_name(const std::string& w) {
  for (const char* n : kNames)
    if (w == n) return true;
  return false;
}

inline std::string capitalized(std::string w) {
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

inline PunctSentence punct_sentence(Rng& rng) {
  PunctSentence s;
  std::vector<std::string> words;
  const double kind = rng.uniform();
  bool single = false;
  if (kind < 0.2) {
    words = split_words(pick(rng, kQuestions));
    s.question = true;
  } else if (kind < 0.4) {
    words = split_words(pick(rng, kStatements));
  } else if (kind < 0.85) {
    s.template_index = rng.below(kAmbiguous.size());
    words = split_words(kAmbiguous[s.template_index]);
    s.ambiguous = true;
    s.question = rng.bernoulli(0.5);
  } else {
    s.template_index = kAmbiguous.size() + rng.below(kAmbiguousSingle.size());
    words = {kAmbiguousSingle[s.template_index - kAmbiguous.size()]};
    s.ambiguous = true;
    s.question = rng.bernoulli(0.5);
    single = true;
  }
  std::vector<std::string> out;
  if (!single && rng.bernoulli(0.2)) out.push_back(std::string(pick(rng, kInterjections)) + ",");
  for (const auto& w : words) out.push_back(w);
  if (rng.bernoulli(0.15)) {
    out.back() += ",";
    out.emplace_back(pick(rng, kNames));
  }
  out.back() += s.question ? "?" : ".";
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::string bare = out[i];
    while (!bare.empty() && (bare.back() == ',' || bare.back() == '.' || bare.back() == '?')) bare.pop_back();
    if (i == 0 || bare == "i" || is_name(bare)) out[i] = capitalized(out[i]);
  }
  for (std::size_t i = 0; i < out.size(); ++i) s.rich += (i ? " " : "") + out[i];
  return s;
}

inline Utterance punct_utterance(Rng& rng, std::string id, std::vector<std::size_t>* templates = nullptr,
                                 std::vector<bool>* marks = nullptr) {
  const double r = rng.uniform();
  const std::size_t n_sent = r < 0.4 ? 1 : r < 0.8 ? 2 : 3;
  Utterance u;
  u.id = std::move(id);
  std::vector<SpokenWord> spoken;
  std::vector<int> tags;
  for (std::size_t k = 0; k < n_sent; ++k) {
    const auto sent = punct_sentence(rng);
    const auto enc = encode_rich_text(sent.rich);
    for (std::size_t i = 0; i < enc.tokens.size(); ++i) {
      SpokenWord w{enc.tokens[i], {}, 0.0};
      if (i + 1 == enc.tokens.size()) w.prosody = sent.question ? kRise : kFall;
      spoken.push_back(w);
      u.tokens.push_back(enc.tokens[i]);
      tags.push_back(enc.tags[i].id());
    }
    if (sent.ambiguous) {
      u.cues.push_back(u.tokens.size() - 1);
      if (templates) templates->push_back(sent.template_index);
      if (marks) marks->push_back(sent.question);
    }
  }
  const double timbre = rng.uniform(-1.0, 1.0);
  for (auto& w : spoken) w.timbre = timbre;
  u.frames = synthesize_frames(spoken, rng);
  u.tags = std::move(tags);
  return u;
}

// ---- speaker roles --------------------------------------------------------

inline const std::array<const char*, 10> kAgentPhrases = {
    "may i start with your phone number", "how can i help you today",   "would you like anything else",
    "your order will arrive in thirty minutes", "is it pick up or delivery", "thank you for calling",
    "can i have your address please",     "the total comes to twenty dollars", "let me confirm your order",
    "we have a special on large pizzas"};
inline const std::array<const char*, 10> kClientPhrases = {
    "i want to order a pizza",  "my number is five one nine", "it is a delivery",
    "can i get extra cheese",   "i live on main street",      "i don't know my phone number",
    "do you have vegetarian options", "i will pay with card", "make it a large one",
    "no onions on mine"};
inline const std::array<const char*, 10> kNeutralPhrases = {"okay", "yes",   "um",       "uh huh", "right",
                                                           "sure", "alright", "hmm okay", "yeah",   "mhm"};

inline constexpr double kNeutralPhraseRate = 0.2;

struct RolesDialog {
  Utterance utterance;
  std::vector<Turn> turns;  // generator's merged speaker turns
};

inline RolesDialog roles_dialog(Rng& rng, std::string id) {
  RolesDialog d;
  Utterance& u = d.utterance;
  u.id = std::move(id);
  std::vector<SpokenWord> spoken;
  std::vector<int> tags;
  const int n_phrases = rng.range(3, 6);
  for (int k = 0; k < n_phrases; ++k) {
    const auto role = rng.bernoulli(0.5) ? Role::agent : Role::client;
    const bool neutral = rng.bernoulli(kNeutralPhraseRate);
    const char* phrase = neutral ? pick(rng, kNeutralPhrases)
                                 : role == Role::agent ? pick(rng, kAgentPhrases) : pick(rng, kClientPhrases);
    const int tag = static_cast<int>(role);
    for (const auto& w : split_words(phrase)) {
      if (neutral) u.cues.push_back(u.tokens.size());
      u.tokens.push_back(w);
      tags.push_back(tag);
      spoken.push_back({w, {}, role == Role::agent ? 1.0 : -1.0});
      const std::size_t pos = u.tokens.size() - 1;
      if (d.turns.empty() || d.turns.back().label != tag)
        d.turns.push_back({pos, pos, tag});
      else
        d.turns.back().end = pos;
    }
  }
  u.frames = synthesize_frames(spoken, rng);
  u.tags = std::move(tags);
  return d;
}

// ---- sentiment ------------------------------------------------------------

inline const std::array<std::array<const char*, 3>, 5> kPolarityWords = {{
    {"terrible", "awful", "horrible"},
    {"bad", "slow", "boring"},
    {"okay", "average", "ordinary"},
    {"good", "nice", "decent"},
    {"excellent", "wonderful", "amazing"},
}};
inline const std::array<const char*, 8> kNouns = {"movie", "food", "service", "hotel", "trip", "show", "game", "book"};
inline const std::array<const char*, 4> kSentimentTemplates = {
    "the {n} was {a}", "i think the {n} is {a}", "honestly the {n} looked {a} to me", "what a {a} {n}"};

inline constexpr double kTextOnlyRate = 0.1;
// Word identity is hard to hear in this corpus, so polarity is mostly a text
// cue while arousal is only in the frames.
inline constexpr double kSentimentSignatureNoise = 1.0;
inline constexpr std::size_t kSentimentClasses = 7;

inline std::string fill_template(std::string t, const std::string& noun, const std::string& adj) {
  t.replace(t.find("{n}"), 3, noun);
  t.replace(t.find("{a}"), 3, adj);
  return t;
}

// Label = text polarity (-2..2) + arousal (-1..1), shifted to 0..6.
inline Utterance sentiment_utterance(Rng& rng, std::string id) {
  Utterance u;
  u.id = std::move(id);
  const int polarity = rng.range(-2, 2);
  const int arousal = rng.range(-1, 1);
  const std::string adj = kPolarityWords[static_cast<std::size_t>(polarity + 2)][rng.below(3)];
  u.tokens = split_words(fill_template(pick(rng, kSentimentTemplates), pick(rng, kNouns), adj));
  u.label = polarity + arousal + 3;
  const bool text_only = rng.bernoulli(kTextOnlyRate);
  std::vector<SpokenWord> spoken;
  const double timbre = rng.uniform(-1.0, 1.0);
  for (const auto& w : u.tokens) {
    SpokenWord s{w, {}, timbre};
    s.prosody.fill(static_cast<double>(arousal));
    spoken.push_back(s);
  }
  Tensor frames = synthesize_frames(spoken, rng, kSentimentSignatureNoise);
  if (!text_only) u.frames = std::move(frames);
  return u;
}

// ---- intent + entity from two noisy hypotheses ----------------------------

inline const std::array<std::array<const char*, 3>, 4> kIntentVerbs = {{
    {"turn on", "switch on", "start"},
    {"turn off", "switch off", "stop"},
    {"increase", "raise", "turn up"},
    {"decrease", "lower", "turn down"},
}};
inline const std::array<const char*, 4> kEntities = {"music", "lights", "heat", "volume"};
inline const std::array<const char*, 4> kLocations = {"", "in the kitchen", "in the bedroom", "in the living room"};
inline const std::array<const char*, 5> kAsrNoise = {"uh", "a", "of", "and", "the"};
inline const std::array<const char*, 3> kMumbles = {"um", "er", "hmm"};
inline constexpr std::array<double, 4> kIntentCodes = {-1.5, -0.5, 0.5, 1.5};
inline constexpr double kDisambiguationRate = 0.15;
inline constexpr double kAsrWordErrorRate = 0.08;

inline Utterance intent_utterance(Rng& rng, std::string id) {
  Utterance u;
  u.id = std::move(id);
  const int intent = rng.range(0, 3);
  const int entity = rng.range(0, 3);
  const auto verb = split_words(kIntentVerbs[static_cast<std::size_t>(intent)][rng.below(3)]);
  std::vector<std::string> spoken_words = verb;
  spoken_words.push_back("the");
  spoken_words.push_back(kEntities[static_cast<std::size_t>(entity)]);
  for (const auto& w : split_words(pick(rng, kLocations))) spoken_words.push_back(w);

  const bool disambiguate = rng.bernoulli(kDisambiguationRate);
  std::vector<std::vector<std::string>> hyps(2);
  for (auto& h : hyps) {
    for (std::size_t i = 0; i < spoken_words.size(); ++i) {
      if (disambiguate && i < verb.size())
        h.emplace_back(pick(rng, kMumbles));
      else if (rng.bernoulli(kAsrWordErrorRate))
        h.emplace_back(pick(rng, kAsrNoise));
      else
        h.push_back(spoken_words[i]);
    }
  }
  u.tokens = concat_nbest(hyps);
  if (disambiguate)
    for (std::size_t i = 0; i < verb.size(); ++i) {
      u.cues.push_back(i);
      u.cues.push_back(hyps[0].size() + 1 + i);
    }
  u.label = intent;
  u.label2 = entity;
  std::vector<SpokenWord> spoken;
  const double timbre = rng.uniform(-1.0, 1.0);
  for (const auto& w : spoken_words) {
    SpokenWord s{w, {}, timbre};
    if (disambiguate) s.prosody.fill(kIntentCodes[static_cast<std::size_t>(intent)]);
    spoken.push_back(s);
  }
  u.frames = synthesize_frames(spoken, rng);
  return u;
}

}  // namespace synth

struct TaskSpec {
  std::size_t n_outputs = 0;   // tags for tagging tasks, classes otherwise
  std::size_t n_outputs2 = 0;  // second head (entity) for the intent task
  std::vector<std::string> names;
};

inline TaskSpec task_spec(Task task) {
  switch (task) {
    case Task::punct: return {kRichTagCount, 0, rich_tag_names()};
    case Task::roles: return {2, 0, role_tag_names()};
    case Task::sentiment: return {synth::kSentimentClasses, 0, {"-3", "-2", "-1", "0", "1", "2", "3"}};
    case Task::intent: return {synth::kIntentVerbs.size(), synth::kEntities.size(), {}};
  }
  throw ConfigError("unknown task");
}

// Deterministic in (task, n, seed); 80/10/10 split in generation order.
inline Corpus gen_corpus(Task task, std::size_t n, std::uint64_t seed) {
  if (n < kMinCorpusSize) throw ConfigError("corpus size must be at least " + std::to_string(kMinCorpusSize));
  Rng rng(seed);
  std::vector<Utterance> all;
  all.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string id = synth::make_id(task, i);
    switch (task) {
      case Task::punct: all.push_back(synth::punct_utterance(rng, std::move(id))); break;
      case Task::roles: all.push_back(synth::roles_dialog(rng, std::move(id)).utterance); break;
      case Task::sentiment: all.push_back(synth::sentiment_utterance(rng, std::move(id))); break;
      case Task::intent: all.push_back(synth::intent_utterance(rng, std::move(id))); break;
    }
  }
  const std::size_t n_train = n * 8 / 10, n_val = n / 10;
  Corpus c;
  c.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(n_train)));
  c.val.assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(n_train)),
               std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val)));
  c.test.assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val)),
                std::make_move_iterator(all.end()));
  return c;
}

inline void write_corpus(const std::filesystem::path& dir, const Corpus& c, Task task, std::size_t n,
                         std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  write_split(dir, "train", c.train);
  write_split(dir, "val", c.val);
  write_split(dir, "test", c.test);
  const nlohmann::json meta = {{"task", std::string(to_string(task))}, {"n", n}, {"seed", seed},
                               {"d_in", kFrameChannels}, {"frames_per_word", kFramesPerWord}};
  std::ofstream out(dir / "dataset.json", std::ios::binary);
  if (!out) throw IoError((dir / "dataset.json").string(), "cannot open for writing");
  out << meta.dump(2) << '\n';
}

}  // namespace xstitch

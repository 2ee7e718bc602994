// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <algorithm>
#include <cstring>
#include <map>
#include <set>
#include <sstream>

#include "helpers.hpp"

namespace xstitch {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> tag_strings(const std::vector<RichTag>& tags) {
  std::vector<std::string> out;
  for (const auto& t : tags) out.push_back(to_string(t));
  return out;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("xstitch_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(RichCodec, SampleSentence) {
  const auto enc = encode_rich_text("Thank you. I understand. Do you?");
  EXPECT_EQ(enc.tokens, (std::vector<std::string>{"thank", "you", "i", "understand", "do", "you"}));
  EXPECT_EQ(tag_strings(enc.tags), (std::vector<std::string>{"Cp:0", "0:Pr", "Cp:0", "0:Pr", "Cp:0", "0:Qus"}));
  EXPECT_EQ(decode_tags(enc.tokens, enc.tags), "Thank you. I understand. Do you?");
}

TEST(RichCodec, SampleTagsDecode) {
  std::vector<RichTag> tags;
  for (const char* s : {"Cp:0", "0:Pr", "Cp:0", "0:Pr", "Cp:0", "0:Qus"}) tags.push_back(parse_rich_tag(s));
  EXPECT_EQ(decode_tags({"thank", "you", "i", "understand", "do", "you"}, tags), "Thank you. I understand. Do you?");
}

TEST(RichCodec, SmallExamples) {
  const auto hello = encode_rich_text("hello");
  EXPECT_EQ(hello.tokens, std::vector<std::string>{"hello"});
  EXPECT_EQ(tag_strings(hello.tags), std::vector<std::string>{"0:0"});
  EXPECT_EQ(decode_tags({"a", "b", "c"}, std::vector<RichTag>(3)), "a b c");
  EXPECT_EQ(decode_tags({"token"}, {RichTag{true, Punct::question}}), "Token?");
}

TEST(RichCodec, EightTagsWithStableIds) {
  EXPECT_EQ(rich_tag_names().size(), 8u);
  std::set<std::string> names(rich_tag_names().begin(), rich_tag_names().end());
  EXPECT_EQ(names.size(), 8u);
  for (int id = 0; id < 8; ++id) {
    EXPECT_EQ(RichTag::from_id(id).id(), id);
    EXPECT_EQ(parse_rich_tag(rich_tag_names()[static_cast<std::size_t>(id)]).id(), id);
  }
  EXPECT_THROW(RichTag::from_id(8), DataError);
}

TEST(RichCodec, UnsupportedPunctuationNamesCharacter) {
  try {
    encode_rich_text("Wait! Now.");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find('!'), std::string::npos) << e.what();
  }
  EXPECT_THROW(encode_rich_text("semi;colon"), DataError);
}

TEST(RichCodec, LengthMismatchRejected) {
  EXPECT_THROW(decode_tags({"a", "b"}, std::vector<RichTag>(1)), DimensionError);
}

TEST(RichCodecProperty, RoundTripsThousandsOfGeneratedSentences) {
  Rng rng(1);
  std::size_t checked = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto s = synth::punct_sentence(rng).rich;
    const auto enc = encode_rich_text(s);
    ASSERT_EQ(decode_tags(enc.tokens, enc.tags), s);
    ++checked;
  }
  // Multi-sentence utterances built from the corpus tags.
  const auto corpus = gen_corpus(Task::punct, 300, 2);
  for (const auto& u : corpus.train) {
    const std::string rich = decode_tags(u.tokens, rich_tags_from_ids(*u.tags));
    const auto enc = encode_rich_text(rich);
    ASSERT_EQ(enc.tokens, u.tokens);
    std::vector<int> ids;
    for (const auto& t : enc.tags) ids.push_back(t.id());
    ASSERT_EQ(ids, *u.tags);
    ++checked;
  }
  EXPECT_GE(checked, 1000u);
}

TEST(ConcatNbest, Examples) {
  EXPECT_EQ(concat_nbest({{"a", "b"}}), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(concat_nbest({{"a", "b"}, {"c"}}), (std::vector<std::string>{"a", "b", "[EOU]", "c"}));
  EXPECT_NE(concat_nbest({{"c"}, {"a", "b"}}), concat_nbest({{"a", "b"}, {"c"}}));
  EXPECT_THROW(concat_nbest({}), DataError);
}

TEST(GenCorpus, SameSeedIsBitwiseIdentical) {
  for (Task t : {Task::punct, Task::roles, Task::sentiment, Task::intent}) {
    const auto a = gen_corpus(t, 60, 9), b = gen_corpus(t, 60, 9);
    EXPECT_EQ(a.train, b.train) << to_string(t);
    EXPECT_EQ(a.val, b.val);
    EXPECT_EQ(a.test, b.test);
    const auto c = gen_corpus(t, 60, 10);
    EXPECT_NE(a.train, c.train);
  }
}

TEST(GenCorpus, SplitsAreEightyTenTenAndDisjoint) {
  const auto c = gen_corpus(Task::sentiment, 101, 3);
  EXPECT_EQ(c.train.size(), 80u);
  EXPECT_EQ(c.val.size(), 10u);
  EXPECT_EQ(c.test.size(), 11u);
  std::set<std::string> ids;
  for (const auto* split : {&c.train, &c.val, &c.test})
    for (const auto& u : *split) EXPECT_TRUE(ids.insert(u.id).second) << u.id;
}

TEST(GenCorpus, RejectsTinyCorpusAndUnknownTask) {
  EXPECT_THROW(gen_corpus(Task::punct, 29, 1), ConfigError);
  EXPECT_THROW(parse_task("translation"), ConfigError);
}

TEST(GenCorpus, RecordsSatisfyInvariants) {
  for (Task t : {Task::punct, Task::roles, Task::sentiment, Task::intent}) {
    const auto c = gen_corpus(t, 200, 4);
    const auto spec = task_spec(t);
    std::size_t text_only = 0;
    for (const auto& u : c.train) {
      EXPECT_NO_THROW(u.validate());
      if (u.frames) EXPECT_EQ(u.frames->cols(), kFrameChannels);
      if (is_tagging(t)) {
        ASSERT_TRUE(u.tags.has_value());
        ASSERT_TRUE(u.frames.has_value());
        for (int tag : *u.tags) EXPECT_LT(static_cast<std::size_t>(tag), spec.n_outputs);
        EXPECT_EQ(u.frames->rows(), u.tokens.size() * kFramesPerWord);
      } else {
        ASSERT_TRUE(u.label.has_value());
        EXPECT_LT(static_cast<std::size_t>(*u.label), spec.n_outputs);
      }
      if (t == Task::intent) {
        ASSERT_TRUE(u.label2.has_value());
        EXPECT_LT(static_cast<std::size_t>(*u.label2), spec.n_outputs2);
        EXPECT_EQ(std::count(u.tokens.begin(), u.tokens.end(), "[EOU]"), 1);
      }
      text_only += !u.has_speech();
    }
    if (t == Task::sentiment) {
      EXPECT_GT(text_only, 0u);
      EXPECT_LT(text_only, c.train.size() / 4);
    } else {
      EXPECT_EQ(text_only, 0u);
    }
  }
}

// Ambiguous-sentence audit over the generated corpus. Each cue marks the final
// token of an ambiguous sentence; its template is recovered from the words
// with any leading interjection and trailing vocative name removed.
struct AmbiguousCell {
  std::string core;
  bool question = false;
  double rise = 0.0;
};

std::vector<AmbiguousCell> ambiguous_cells(const std::vector<Utterance>& utts) {
  std::vector<AmbiguousCell> cells;
  for (const auto& u : utts) {
    const auto tags = rich_tags_from_ids(*u.tags);
    for (std::size_t cue : u.cues) {
      std::size_t start = cue;
      while (start > 0 && tags[start - 1].punct != Punct::period && tags[start - 1].punct != Punct::question) --start;
      std::size_t first = start, last = cue;
      const bool interjection = std::find(synth::kInterjections.begin(), synth::kInterjections.end(),
                                          u.tokens[first]) != synth::kInterjections.end();
      if (last > first && interjection && tags[first].punct == Punct::comma) ++first;
      if (last > first && synth::is_name(u.tokens[last]) && tags[last - 1].punct == Punct::comma) --last;
      AmbiguousCell c;
      for (std::size_t i = first; i <= last; ++i) c.core += (i > first ? " " : "") + u.tokens[i];
      c.question = tags[cue].punct == Punct::question;
      for (std::size_t k = 0; k < kFramesPerWord; ++k) c.rise += (*u.frames)(cue * kFramesPerWord + k, kProsodyChannel);
      cells.push_back(c);
    }
  }
  return cells;
}

TEST(PunctAudit, AmbiguousTemplatesAreRecognised) {
  const auto c = gen_corpus(Task::punct, 3000, 7);
  std::set<std::string> known;
  for (const char* s : synth::kAmbiguous) known.insert(s);
  for (const char* s : synth::kAmbiguousSingle) known.insert(s);
  const auto cells = ambiguous_cells(c.train);
  ASSERT_GT(cells.size(), 1000u);
  for (const auto& cell : cells) EXPECT_TRUE(known.contains(cell.core)) << cell.core;
}

TEST(PunctAudit, TextOnlyChanceIsHalfAndMarkIndependentOfWords) {
  const auto c = gen_corpus(Task::punct, 3000, 7);
  std::vector<Utterance> all = c.train;
  all.insert(all.end(), c.val.begin(), c.val.end());
  all.insert(all.end(), c.test.begin(), c.test.end());
  const auto cells = ambiguous_cells(all);
  std::map<std::string, std::array<double, 2>> table;
  double questions = 0;
  for (const auto& cell : cells) {
    table[cell.core][cell.question] += 1;
    questions += cell.question;
  }
  const double n = static_cast<double>(cells.size());
  const double p = questions / n;
  // Within 4 standard errors of a fair coin.
  EXPECT_NEAR(p, 0.5, 4.0 * std::sqrt(0.25 / n));

  // The best text-only rule picks each template's majority mark.
  double majority = 0;
  for (const auto& [core, counts] : table) majority += std::max(counts[0], counts[1]);
  EXPECT_LT(majority / n, 0.55);

  // Pearson chi-square for independence of template and mark.
  double chi2 = 0;
  for (const auto& [core, counts] : table) {
    const double row = counts[0] + counts[1];
    for (int m = 0; m < 2; ++m) {
      const double expected = row * (m ? p : 1 - p);
      ASSERT_GE(expected, 5.0) << core;
      chi2 += (counts[m] - expected) * (counts[m] - expected) / expected;
    }
  }
  ASSERT_EQ(table.size(), 14u);
  // Upper 5% point of chi-square with 13 degrees of freedom.
  constexpr double kCritical13 = 22.362;
  EXPECT_LT(chi2, kCritical13) << "chi2=" << chi2;
}

TEST(PunctAudit, RiseChannelDeterminesTheMark) {
  const auto c = gen_corpus(Task::punct, 3000, 7);
  for (const auto& cell : ambiguous_cells(c.train)) EXPECT_EQ(cell.rise > 0, cell.question) << cell.core;
}

TEST(RolesCorpus, TagsRoundTripGeneratorTurns) {
  Rng rng(5);
  for (int i = 0; i < 300; ++i) {
    const auto d = synth::roles_dialog(rng, "d" + std::to_string(i));
    EXPECT_EQ(segment_turns(*d.utterance.tags), d.turns);
    for (const auto& t : d.turns)
      for (std::size_t w = t.start; w <= t.end; ++w) {
        double timbre = 0.0;
        for (std::size_t k = 0; k < kFramesPerWord; ++k) timbre += (*d.utterance.frames)(w * kFramesPerWord + k, kTimbreChannel);
        EXPECT_EQ(timbre > 0, t.label == static_cast<int>(Role::agent));
      }
  }
}

TEST(RolesCorpus, NeutralShareNearTwentyPercent) {
  const auto c = gen_corpus(Task::roles, 2000, 11);
  std::size_t cues = 0, tokens = 0;
  for (const auto& u : c.train) {
    cues += u.cues.size();
    tokens += u.tokens.size();
  }
  EXPECT_GT(cues, 0u);
  EXPECT_LT(cues, tokens / 2);
}

TEST(BatchPad, SingleUtteranceMasksItsLengthPlusCls) {
  const auto c = gen_corpus(Task::punct, 30, 1);
  const Vocab v = build_vocab(c.train, 0);
  const std::vector<Utterance> one = {c.train[0]};
  const Batch b = batch_pad(one, v);
  EXPECT_EQ(b.token_width, c.train[0].tokens.size() + 1);
  EXPECT_EQ(b.token_mask[0], PadMask(b.token_width, true));
  EXPECT_EQ(b.frame_mask[0], PadMask(c.train[0].frames->rows(), true));
  EXPECT_EQ(b.tokens(0)[0], Vocab::kCls);
  EXPECT_EQ(b.tag_row(0)[0], kIgnoreLabel);
}

TEST(BatchPad, MixedLengthsPadToBatchMaximum) {
  Utterance a, b;
  a.id = "a";
  a.tokens = {"x", "y", "z"};
  a.tags = std::vector<int>{0, 1, 2};
  b.id = "b";
  b.tokens = {"x", "y", "z", "x", "y"};
  b.tags = std::vector<int>{3, 3, 3, 3, 3};
  const Vocab v = Vocab::build({a.tokens, b.tokens}, 100);
  const std::vector<Utterance> utts = {a, b};
  const Batch batch = batch_pad(utts, v);
  EXPECT_EQ(batch.token_width, 6u);
  EXPECT_EQ(batch.token_mask[0], (PadMask{true, true, true, true, false, false}));
  EXPECT_EQ(batch.token_mask[1], PadMask(6, true));
  EXPECT_EQ(std::vector<int>(batch.tag_row(0).begin(), batch.tag_row(0).end()),
            (std::vector<int>{kIgnoreLabel, 0, 1, 2, kIgnoreLabel, kIgnoreLabel}));
  EXPECT_EQ(batch.frame_width, 0u);
  EXPECT_THROW(batch_pad(std::span<const Utterance>{}, v), DataError);
  Utterance bad = a;
  bad.tags = std::vector<int>{0};
  const std::vector<Utterance> bads = {bad};
  EXPECT_THROW(batch_pad(bads, v), DataError);
}

TEST(BatchPad, OutOfVocabularyMapsToUnk) {
  const Vocab v = Vocab::build({{"known"}}, 100);
  Utterance u;
  u.id = "u";
  u.tokens = {"known", "novel"};
  const std::vector<Utterance> utts = {u};
  const Batch b = batch_pad(utts, v);
  EXPECT_EQ(b.tokens(0)[1], v.id("known"));
  EXPECT_EQ(b.tokens(0)[2], Vocab::kUnk);
}

ModelConfig tiny_config(Task task, FusionMode fusion) {
  ModelConfig cfg;
  cfg.task = task;
  cfg.fusion = fusion;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.speech_layers = 1;
  cfg.text_layers = 1;
  cfg.k_max = 2;
  cfg.init_std = 0.3;
  return cfg;
}

TEST(BatchPad, BatchLossIsTokenWeightedAverageOfSeparateLosses) {
  const auto c = gen_corpus(Task::punct, 30, 6);
  Model m = make_model(tiny_config(Task::punct, FusionMode::xse), build_vocab(c.train, 0), 1);
  const std::vector<Utterance> utts(c.train.begin(), c.train.begin() + 4);
  const Batch batch = batch_pad(utts, m.vocab);
  const double joint = batch_loss(m, batch, false).loss;
  double weighted = 0.0;
  std::size_t tokens = 0;
  for (const auto& u : utts) {
    const std::vector<Utterance> one = {u};
    const auto bl = batch_loss(m, batch_pad(one, m.vocab), false);
    weighted += bl.loss * static_cast<double>(bl.items);
    tokens += bl.items;
    EXPECT_EQ(bl.items, u.tokens.size());
  }
  EXPECT_NEAR(joint, weighted / static_cast<double>(tokens), 1e-12);
}

TEST(BatchPad, ClassificationLossIsMeanOfSeparateLosses) {
  const auto c = gen_corpus(Task::sentiment, 40, 8);
  Model m = make_model(tiny_config(Task::sentiment, FusionMode::se_te), build_vocab(c.train, 0), 2);
  const std::vector<Utterance> utts(c.train.begin(), c.train.begin() + 5);
  const double joint = batch_loss(m, batch_pad(utts, m.vocab), false).loss;
  double sum = 0.0;
  for (const auto& u : utts) {
    const std::vector<Utterance> one = {u};
    sum += batch_loss(m, batch_pad(one, m.vocab), false).loss;
  }
  EXPECT_NEAR(joint, sum / 5.0, 1e-12);
}

TEST(FrameIo, BinaryRoundTripIsBitExact) {
  const fs::path dir = scratch_dir("frames");
  Rng rng(12);
  Tensor f = testing::random_tensor({7, 8}, rng);
  f(0, 0) = -0.0;
  f(1, 1) = 1e-310;
  write_frames(dir / "f.bin", f);
  const Tensor g = read_frames(dir / "f.bin");
  ASSERT_EQ(g.shape(), f.shape());
  EXPECT_EQ(std::memcmp(f.data(), g.data(), f.size() * sizeof(double)), 0);
  // Header: two little-endian int32 then float64 payload.
  const std::string bytes = slurp(dir / "f.bin");
  ASSERT_EQ(bytes.size(), 8 + 7 * 8 * 8u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 7);
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 8);
  std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, 20);
  EXPECT_THROW(read_frames(dir / "short.bin"), IoError);
  EXPECT_THROW(read_frames(dir / "missing.bin"), IoError);
}

TEST(JsonlIo, SplitRoundTripPreservesRecords) {
  const fs::path dir = scratch_dir("jsonl");
  for (Task t : {Task::punct, Task::sentiment, Task::intent}) {
    const auto c = gen_corpus(t, 40, 13);
    write_split(dir / std::string(to_string(t)), "train", c.train);
    const auto back = read_split(dir / std::string(to_string(t)), "train");
    EXPECT_EQ(back, c.train) << to_string(t);
  }
  std::ofstream(dir / "bad.jsonl") << "{\"id\": \"x\", \"tokens\": [\"a\"], \"tags\": [0, 1]}\n";
  EXPECT_THROW(read_records(dir / "bad.jsonl"), DataError);
  std::ofstream(dir / "garbage.jsonl") << "not json\n";
  EXPECT_THROW(read_records(dir / "garbage.jsonl"), DataError);
}

TEST(JsonlIo, RecordCarriesDocumentedFields) {
  Utterance u;
  u.id = "r1";
  u.tokens = {"a"};
  u.label = 2;
  const auto j = to_record(u, std::nullopt);
  for (const char* k : {"id", "tokens", "tags", "label", "label2", "frames"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_TRUE(j["frames"].is_null());
  EXPECT_TRUE(j["tags"].is_null());
  EXPECT_EQ(j["label"], 2);
}

TEST(WriteCorpus, SameSeedGivesIdenticalFiles) {
  const fs::path a = scratch_dir("corpus_a"), b = scratch_dir("corpus_b");
  write_corpus(a, gen_corpus(Task::roles, 40, 3), Task::roles, 40, 3);
  write_corpus(b, gen_corpus(Task::roles, 40, 3), Task::roles, 40, 3);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 4u + 40u);
}

}  // namespace
}  // namespace xstitch

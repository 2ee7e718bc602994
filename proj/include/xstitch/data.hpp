// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Utterance records, the rich-text and role tag codecs, N-best joining,
// batching with padding, and the on-disk dataset format.
#pragma once

#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "xstitch/attention.hpp"
#include "xstitch/heads.hpp"
#include "xstitch/vocab.hpp"

namespace xstitch {

enum class Task { punct, roles, sentiment, intent };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::punct: return "punct";
    case Task::roles: return "roles";
    case Task::sentiment: return "sentiment";
    case Task::intent: return "intent";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "punct") return Task::punct;
  if (s == "roles") return Task::roles;
  if (s == "sentiment") return Task::sentiment;
  if (s == "intent") return Task::intent;
  throw ConfigError("unknown task: " + std::string(s));
}

inline bool is_tagging(Task t) { return t == Task::punct || t == Task::roles; }

// ---------------------------------------------------------------------------
// Rich-text tags: capitalization {0, Cp} x punctuation {0, Cm, Pr, Qus}.

enum class Punct { none = 0, comma = 1, period = 2, question = 3 };

struct RichTag {
  bool cap = false;
  Punct punct = Punct::none;

  int id() const { return (cap ? 4 : 0) + static_cast<int>(punct); }
  static RichTag from_id(int id) {
    if (id < 0 || id >= 8) throw DataError("rich tag id " + std::to_string(id) + " out of range");
    return {id >= 4, static_cast<Punct>(id % 4)};
  }
  bool operator==(const RichTag&) const = default;
};

inline constexpr std::size_t kRichTagCount = 8;

inline const std::vector<std::string>& rich_tag_names() {
  static const std::vector<std::string> names = {"0:0",  "0:Cm",  "0:Pr",  "0:Qus",
                                                 "Cp:0", "Cp:Cm", "Cp:Pr", "Cp:Qus"};
  return names;
}

inline std::string to_string(const RichTag& t) { return rich_tag_names()[static_cast<std::size_t>(t.id())]; }

inline RichTag parse_rich_tag(std::string_view s) {
  const auto& names = rich_tag_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return RichTag::from_id(static_cast<int>(i));
  throw DataError("unknown rich tag: " + std::string(s));
}

struct RichEncoding {
  std::vector<std::string> tokens;
  std::vector<RichTag> tags;
};

// "Thank you. I understand." -> [thank, you, i, understand] with
// [Cp:0, 0:Pr, Cp:0, 0:Pr]. Words may contain letters, digits and
// apostrophes; a single trailing , . or ? becomes the punctuation tag.
inline RichEncoding encode_rich_text(std::string_view rich) {
  RichEncoding enc;
  std::istringstream in{std::string(rich)};
  std::string word;
  while (in >> word) {
    RichTag tag;
    const char last = word.back();
    if (last == ',' || last == '.' || last == '?') {
      tag.punct = last == ',' ? Punct::comma : last == '.' ? Punct::period : Punct::question;
      word.pop_back();
    }
    if (word.empty()) throw DataError("punctuation without a word in: " + std::string(rich));
    for (char c : word) {
      const auto u = static_cast<unsigned char>(c);
      if (!std::isalnum(u) && c != '\'')
        throw DataError(std::string("unsupported character '") + c + "' in: " + std::string(rich));
    }
    tag.cap = std::isupper(static_cast<unsigned char>(word.front())) != 0;
    for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    enc.tokens.push_back(std::move(word));
    enc.tags.push_back(tag);
  }
  return enc;
}

inline std::string decode_tags(const std::vector<std::string>& tokens, const std::vector<RichTag>& tags) {
  if (tokens.size() != tags.size())
    throw DimensionError("decode_tags: " + std::to_string(tokens.size()) + " tokens, " + std::to_string(tags.size()) +
                         " tags");
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    std::string w = tokens[i];
    if (tags[i].cap && !w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    out += w;
    switch (tags[i].punct) {
      case Punct::comma: out += ','; break;
      case Punct::period: out += '.'; break;
      case Punct::question: out += '?'; break;
      case Punct::none: break;
    }
  }
  return out;
}

inline std::vector<RichTag> rich_tags_from_ids(const std::vector<int>& ids) {
  std::vector<RichTag> tags;
  tags.reserve(ids.size());
  for (int id : ids) tags.push_back(RichTag::from_id(id));
  return tags;
}

// Speaker roles for the diarization-as-tagging task.
enum class Role { client = 0, agent = 1 };

inline const std::vector<std::string>& role_tag_names() {
  static const std::vector<std::string> names = {"client", "agent"};
  return names;
}

// h1 [EOU] h2 [EOU] ... hn
inline std::vector<std::string> concat_nbest(const std::vector<std::vector<std::string>>& hypotheses) {
  if (hypotheses.empty()) throw DataError("concat_nbest needs at least one hypothesis");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    if (i) out.emplace_back(kEouToken);
    out.insert(out.end(), hypotheses[i].begin(), hypotheses[i].end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Records.

struct Utterance {
  std::string id;
  std::optional<Tensor> frames;  // [T_in x d_in]
  std::vector<std::string> tokens;
  std::optional<std::vector<int>> tags;
  std::optional<int> label;
  std::optional<int> label2;
  // Token positions whose gold tag is carried only by the frames.
  std::vector<std::size_t> cues;

  bool has_speech() const { return frames.has_value(); }
  bool has_text() const { return !tokens.empty(); }

  void validate() const {
    if (!has_speech() && !has_text()) throw DataError("utterance " + id + " has neither speech nor text");
    if (tags && tags->size() != tokens.size())
      throw DataError("utterance " + id + " has " + std::to_string(tags->size()) + " tags for " +
                      std::to_string(tokens.size()) + " tokens");
    if (frames && frames->rank() != 2) throw DataError("utterance " + id + " frames must be a matrix");
  }

  bool operator==(const Utterance&) const = default;
};

struct Corpus {
  std::vector<Utterance> train, val, test;
};

// ---------------------------------------------------------------------------
// Batching.

struct Batch {
  std::size_t size = 0;
  std::size_t d_in = 0;
  std::size_t frame_width = 0;  // padded frame count, 0 when no member has speech
  std::size_t token_width = 0;  // padded token count including [CLS]
  Tensor frames;                // [B x frame_width x d_in] when frame_width > 0
  std::vector<PadMask> frame_mask;
  std::vector<TokenId> token_ids;  // [B x token_width]
  std::vector<PadMask> token_mask;
  std::vector<int> tags;  // [B x token_width], kIgnoreLabel at [CLS] and padding
  std::vector<int> labels;
  std::vector<int> labels2;
  std::vector<bool> has_speech;

  std::span<const TokenId> tokens(std::size_t b) const { return {token_ids.data() + b * token_width, token_width}; }
  std::span<const int> tag_row(std::size_t b) const { return {tags.data() + b * token_width, token_width}; }

  Tensor frames_of(std::size_t b) const {
    Tensor f({frame_width, d_in});
    std::copy_n(frames.data() + b * frame_width * d_in, frame_width * d_in, f.data());
    return f;
  }

  // Real (non-[CLS], non-padding) token count of member b.
  std::size_t text_length(std::size_t b) const { return count_real(token_mask[b]) - 1; }
};

inline Batch batch_pad(std::span<const Utterance> utts, const Vocab& vocab) {
  if (utts.empty()) throw DataError("cannot batch zero utterances");
  Batch batch;
  batch.size = utts.size();
  for (const auto& u : utts) {
    u.validate();
    batch.token_width = std::max(batch.token_width, u.tokens.size() + 1);
    if (u.frames) {
      if (batch.d_in && u.frames->cols() != batch.d_in) throw DataError("utterance " + u.id + " frame width differs");
      batch.d_in = u.frames->cols();
      batch.frame_width = std::max(batch.frame_width, u.frames->rows());
    }
  }
  if (batch.frame_width) batch.frames = Tensor({batch.size, batch.frame_width, batch.d_in});
  batch.token_ids.assign(batch.size * batch.token_width, Vocab::kPad);
  batch.tags.assign(batch.size * batch.token_width, kIgnoreLabel);
  for (std::size_t b = 0; b < utts.size(); ++b) {
    const auto& u = utts[b];
    PadMask fm(batch.frame_width, false);
    if (u.frames) {
      std::copy_n(u.frames->data(), u.frames->size(), batch.frames.data() + b * batch.frame_width * batch.d_in);
      std::fill_n(fm.begin(), u.frames->rows(), true);
    }
    batch.frame_mask.push_back(std::move(fm));
    batch.has_speech.push_back(u.has_speech());

    PadMask tm(batch.token_width, false);
    TokenId* row = batch.token_ids.data() + b * batch.token_width;
    row[0] = Vocab::kCls;
    tm[0] = true;
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      row[i + 1] = vocab.id(u.tokens[i]);
      tm[i + 1] = true;
    }
    batch.token_mask.push_back(std::move(tm));
    if (u.tags) std::copy(u.tags->begin(), u.tags->end(), batch.tags.begin() + static_cast<std::ptrdiff_t>(b * batch.token_width + 1));
    batch.labels.push_back(u.label.value_or(kIgnoreLabel));
    batch.labels2.push_back(u.label2.value_or(kIgnoreLabel));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Disk format: one JSON-lines file per split; frames live in a raw binary
// file referenced by relative path (int32 T_in, int32 d_in, then float64
// values, all little-endian).

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::array<unsigned char, sizeof(U)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw DataError("unexpected end of binary data");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

inline void write_frames(const std::filesystem::path& path, const Tensor& frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  detail::write_le(out, static_cast<std::int32_t>(frames.rows()));
  detail::write_le(out, static_cast<std::int32_t>(frames.cols()));
  for (double v : frames.values()) detail::write_le(out, v);
  if (!out) throw IoError(path.string(), "write failed");
}

inline Tensor read_frames(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open frame file");
  try {
    const auto t = detail::read_le<std::int32_t>(in);
    const auto d = detail::read_le<std::int32_t>(in);
    if (t <= 0 || d <= 0) throw DataError("bad frame header");
    Tensor f({static_cast<std::size_t>(t), static_cast<std::size_t>(d)});
    for (double& v : f.values()) v = detail::read_le<double>(in);
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after frame payload");
    return f;
  } catch (const DataError& e) {
    throw IoError(path.string(), e.what());
  }
}

inline nlohmann::json to_record(const Utterance& u, const std::optional<std::string>& frames_relpath) {
  nlohmann::json j;
  j["id"] = u.id;
  j["tokens"] = u.tokens;
  j["tags"] = u.tags ? nlohmann::json(*u.tags) : nlohmann::json(nullptr);
  j["label"] = u.label ? nlohmann::json(*u.label) : nlohmann::json(nullptr);
  j["label2"] = u.label2 ? nlohmann::json(*u.label2) : nlohmann::json(nullptr);
  j["frames"] = frames_relpath ? nlohmann::json(*frames_relpath) : nlohmann::json(nullptr);
  if (!u.cues.empty()) j["cues"] = u.cues;
  return j;
}

inline Utterance from_record(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  Utterance u;
  try {
    u.id = j.at("id").get<std::string>();
    u.tokens = j.at("tokens").get<std::vector<std::string>>();
    if (j.contains("tags") && !j["tags"].is_null()) {
      std::vector<int> tags;
      for (const auto& t : j["tags"]) tags.push_back(t.is_string() ? parse_rich_tag(t.get<std::string>()).id() : t.get<int>());
      u.tags = std::move(tags);
    }
    if (j.contains("label") && !j["label"].is_null()) u.label = j["label"].get<int>();
    if (j.contains("label2") && !j["label2"].is_null()) u.label2 = j["label2"].get<int>();
    if (j.contains("frames") && !j["frames"].is_null()) u.frames = read_frames(base_dir / j["frames"].get<std::string>());
    if (j.contains("cues")) u.cues = j["cues"].get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed record: ") + e.what());
  }
  u.validate();
  return u;
}

inline void write_split(const std::filesystem::path& dir, const std::string& split,
                        const std::vector<Utterance>& utts) {
  std::filesystem::create_directories(dir / "frames");
  const auto path = dir / (split + ".jsonl");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  for (const auto& u : utts) {
    std::optional<std::string> rel;
    if (u.frames) {
      rel = "frames/" + u.id + ".bin";
      write_frames(dir / *rel, *u.frames);
    }
    out << to_record(u, rel).dump() << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

// Reads any JSON-lines file of records; frame paths resolve against the
// file's directory.
inline std::vector<Utterance> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open");
  std::vector<Utterance> utts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      utts.push_back(from_record(nlohmann::json::parse(line), path.parent_path()));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return utts;
}

inline std::vector<Utterance> read_split(const std::filesystem::path& dir, const std::string& split) {
  return read_records(dir / (split + ".jsonl"));
}

}  // namespace xstitch

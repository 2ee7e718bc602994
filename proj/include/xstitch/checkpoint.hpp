// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
//
// File layout:
//   "XSTITCH1"                      8 bytes
//   header length N                 uint64 little-endian
//   header                          N bytes of UTF-8 JSON
//   payload                         float64 little-endian, manifest order
//
// The header holds {config, train, step, metric, vocab, extra, manifest},
// where manifest is a list of {name, shape, byte_offset, trainable} with
// byte offsets relative to the payload start.
#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "xstitch/model.hpp"
#include "xstitch/training.hpp"

namespace xstitch {

inline constexpr std::string_view kCheckpointMagic = "XSTITCH1";

struct CheckpointMeta {
  ModelConfig config;
  std::optional<TrainConfig> train;
  std::size_t step = 0;
  double metric = 0.0;
  std::vector<std::string> vocab;
  nlohmann::json extra = nlohmann::json::object();
};

struct Checkpoint {
  CheckpointMeta meta;
  ParamStore params;
};

namespace detail {

inline nlohmann::json checkpoint_header(const ParamStore& params, const CheckpointMeta& meta) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    manifest.push_back(
        {{"name", p.name}, {"shape", p.value.shape()}, {"byte_offset", offset}, {"trainable", p.trainable}});
    offset += p.value.size() * sizeof(double);
  }
  nlohmann::json h;
  h["config"] = to_json(meta.config);
  h["train"] = meta.train ? to_json(*meta.train) : nlohmann::json(nullptr);
  h["step"] = meta.step;
  h["metric"] = meta.metric;
  h["vocab"] = meta.vocab;
  h["extra"] = meta.extra;
  h["manifest"] = manifest;
  return h;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const CheckpointMeta& meta) {
  const std::string header = detail::checkpoint_header(params, meta).dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open checkpoint for writing");
  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  detail::write_le(out, static_cast<std::uint64_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& p : params)
    for (double v : p.value.values()) detail::write_le(out, v);
  out.flush();
  if (!out) throw IoError(path.string(), "checkpoint write failed");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open checkpoint");
  const auto fail = [&](const std::string& what) { return IoError(path.string(), what); };
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string_view(magic, 8) != kCheckpointMagic) throw fail("not a checkpoint (bad magic)");
  std::uint64_t header_len = 0;
  try {
    header_len = detail::read_le<std::uint64_t>(in);
  } catch (const DataError&) {
    throw fail("truncated header length");
  }
  const auto file_size = std::filesystem::file_size(path);
  if (header_len > file_size) throw fail("header length exceeds file size");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw fail("truncated header");

  Checkpoint ck;
  std::uint64_t expected_bytes = 0;
  try {
    const auto h = nlohmann::json::parse(header);
    ck.meta.config = model_config_from_json(h.at("config"));
    if (!h.at("train").is_null()) ck.meta.train = train_config_from_json(h.at("train"));
    ck.meta.step = h.at("step").get<std::size_t>();
    ck.meta.metric = h.at("metric").get<double>();
    ck.meta.vocab = h.at("vocab").get<std::vector<std::string>>();
    ck.meta.extra = h.at("extra");
    for (const auto& e : h.at("manifest")) {
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("byte_offset").get<std::uint64_t>();
      if (offset != expected_bytes)
        throw fail("manifest offset for " + e.at("name").get<std::string>() + " is " + std::to_string(offset) +
                   ", expected " + std::to_string(expected_bytes));
      Tensor t(shape);
      expected_bytes += t.size() * sizeof(double);
      ck.params.add(e.at("name").get<std::string>(), std::move(t), e.at("trainable").get<bool>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }
  const std::uint64_t payload = file_size - 16 - header_len;
  if (payload != expected_bytes)
    throw fail("payload is " + std::to_string(payload) + " bytes, manifest needs " + std::to_string(expected_bytes));
  for (auto& p : ck.params)
    for (double& v : p.value.values()) v = detail::read_le<double>(in);
  return ck;
}

// Copies checkpoint tensors into a model built from the same configuration.
// Any difference in names, count or shapes is rejected with the first
// offending entry named.
inline void load_into(Model& model, const ParamStore& params) {
  if (params.size() != model.store.size())
    throw ConfigError("checkpoint holds " + std::to_string(params.size()) + " tensors, model expects " +
                      std::to_string(model.store.size()));
  auto it = params.begin();
  for (auto& p : model.store) {
    if (it->name != p.name) throw ConfigError("checkpoint tensor " + it->name + " where model expects " + p.name);
    if (it->value.shape() != p.value.shape())
      throw ConfigError("checkpoint tensor " + p.name + " has shape " + shape_string(it->value.shape()) +
                        ", model expects " + shape_string(p.value.shape()));
    ++it;
  }
  it = params.begin();
  for (auto& p : model.store) {
    p.value = it->value;
    p.trainable = it->trainable;
    ++it;
  }
}

inline CheckpointMeta meta_for(const Model& model) {
  CheckpointMeta meta;
  meta.config = model.config;
  meta.vocab = model.vocab.tokens();
  return meta;
}

inline void save_model(const std::filesystem::path& path, const Model& model, CheckpointMeta meta) {
  meta.config = model.config;
  meta.vocab = model.vocab.tokens();
  save_checkpoint(path, model.store, meta);
}

inline Model model_from_checkpoint(const Checkpoint& ck) {
  Model m = make_model(ck.meta.config, Vocab::from_tokens(ck.meta.vocab), 0);
  load_into(m, ck.params);
  return m;
}

inline Model load_model(const std::filesystem::path& path) { return model_from_checkpoint(load_checkpoint(path)); }

}  // namespace xstitch

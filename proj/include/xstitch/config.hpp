// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration in a flat key-value text format:
//
//   # comment
//   task = punct
//   fusion = xse
//   seed = 7
//   model.d_model = 64
//   train.lr = 0.001
//   paths.data = data/punct
//   paths.out = runs/punct-xse
//
// Keys: task, fusion, seed; model.{d_model, heads, speech_layers,
// text_layers, d_in, k_max, vocab_size, init_std}; train.{lr, batch_size,
// freeze_steps, patience, max_epochs, seed}; paths.{data, out}.
// train.seed defaults to seed.
#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"

#include "xstitch/training.hpp"

namespace xstitch {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;

  void validate() const {
    model.validate();
    train.validate();
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key " + key + ": cannot parse '" + value + "'");
  return out;
}

}  // namespace detail

// Applies one key = value setting. Unknown keys are rejected.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value, bool* train_seed_set = nullptr) {
  using detail::parse_number;
  auto size = [&] { return parse_number<std::size_t>(key, value); };
  if (key == "task") c.model.task = parse_task(value);
  else if (key == "fusion") c.model.fusion = parse_fusion(value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "model.d_model") c.model.d_model = size();
  else if (key == "model.heads") c.model.heads = size();
  else if (key == "model.speech_layers") c.model.speech_layers = size();
  else if (key == "model.text_layers") c.model.text_layers = size();
  else if (key == "model.d_in") c.model.d_in = size();
  else if (key == "model.k_max") c.model.k_max = size();
  else if (key == "model.vocab_size") c.model.vocab_size = size();
  else if (key == "model.init_std") c.model.init_std = parse_number<double>(key, value);
  else if (key == "train.lr") c.train.lr = parse_number<double>(key, value);
  else if (key == "train.batch_size") c.train.batch_size = size();
  else if (key == "train.freeze_steps") c.train.freeze_steps = size();
  else if (key == "train.patience") c.train.patience = size();
  else if (key == "train.max_epochs") c.train.max_epochs = size();
  else if (key == "train.seed") {
    c.train.seed = parse_number<std::uint64_t>(key, value);
    if (train_seed_set) *train_seed_set = true;
  } else if (key == "paths.data") c.data_dir = value;
  else if (key == "paths.out") c.out_dir = value;
  else throw ConfigError("unknown config key: " + key);
}

// Parses `text`; `overrides` ("key=value") are applied after the file.
inline RunConfig parse_run_config(std::string_view text, const std::vector<std::string>& overrides = {}) {
  RunConfig c;
  bool train_seed_set = false;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  auto apply = [&](const std::string& raw, const std::string& where) {
    const auto eq = raw.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = detail::trim(std::string_view(raw).substr(0, eq));
    const std::string value = detail::trim(std::string_view(raw).substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where + ": empty key or value");
    apply_setting(c, key, value, &train_seed_set);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    apply(line, "line " + std::to_string(lineno));
  }
  for (const auto& o : overrides) apply(o, "override '" + o + "'");
  if (!train_seed_set) c.train.seed = c.seed;
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open config");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"seed", c.seed},
          {"paths", {{"data", c.data_dir.string()}, {"out", c.out_dir.string()}}}};
}

}  // namespace xstitch

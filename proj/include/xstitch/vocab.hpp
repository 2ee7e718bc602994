// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xstitch/errors.hpp"

namespace xstitch {

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kEouToken = "[EOU]";

using TokenId = int;

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kEou = 3;

  Vocab() {
    for (auto s : {kPadToken, kUnkToken, kClsToken, kEouToken}) add(std::string(s));
  }

  // Rebuilds from an ordered token list (as stored in checkpoints).
  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    Vocab v;
    if (tokens.size() < 4 || tokens[0] != kPadToken || tokens[1] != kUnkToken || tokens[2] != kClsToken ||
        tokens[3] != kEouToken)
      throw DataError("vocabulary does not start with the special tokens");
    for (std::size_t i = 4; i < tokens.size(); ++i) v.add(tokens[i]);
    return v;
  }

  // Most frequent words first (ties alphabetical), at most `cap` entries total.
  static Vocab build(const std::vector<std::vector<std::string>>& sentences, std::size_t cap) {
    std::map<std::string, std::size_t> counts;
    for (const auto& s : sentences)
      for (const auto& w : s) ++counts[w];
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (const auto& [w, n] : ranked) {
      if (v.size() >= cap) break;
      if (!v.contains(w)) v.add(w);
    }
    return v;
  }

  TokenId add(std::string token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const TokenId id = static_cast<TokenId>(tokens_.size());
    index_.emplace(token, id);
    tokens_.push_back(std::move(token));
    return id;
  }

  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }

  TokenId id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace xstitch

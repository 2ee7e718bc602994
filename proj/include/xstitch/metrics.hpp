// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "xstitch/errors.hpp"

namespace xstitch {

namespace detail {
inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw DimensionError(std::string(what) + ": prediction length " + std::to_string(a) + " != reference length " +
                         std::to_string(b));
}
}  // namespace detail

struct TagScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct TagReport {
  std::map<int, TagScore> per_tag;  // every tag seen in pred or gold
  double macro_f1 = 0.0;            // mean f1 over tags with support > 0
};

inline TagReport per_tag_f1(std::span<const int> pred, std::span<const int> gold) {
  detail::require_same_length(pred.size(), gold.size(), "per_tag_f1");
  std::map<int, std::size_t> tp, fp, fn;
  std::set<int> tags;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    tags.insert(pred[i]);
    tags.insert(gold[i]);
    if (pred[i] == gold[i]) {
      ++tp[pred[i]];
    } else {
      ++fp[pred[i]];
      ++fn[gold[i]];
    }
  }
  TagReport r;
  double f1_sum = 0.0;
  std::size_t present = 0;
  for (int t : tags) {
    TagScore s;
    const double t_p = static_cast<double>(tp[t]);
    const double pred_n = t_p + static_cast<double>(fp[t]);
    const double gold_n = t_p + static_cast<double>(fn[t]);
    s.support = tp[t] + fn[t];
    s.precision = pred_n > 0 ? t_p / pred_n : 0.0;
    s.recall = gold_n > 0 ? t_p / gold_n : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    if (s.support > 0) {
      f1_sum += s.f1;
      ++present;
    }
    r.per_tag[t] = s;
  }
  r.macro_f1 = present ? f1_sum / static_cast<double>(present) : 0.0;
  return r;
}

// 100 * mismatched / total.
inline double token_error_rate(std::span<const int> pred, std::span<const int> gold) {
  detail::require_same_length(pred.size(), gold.size(), "token_error_rate");
  if (gold.empty()) throw DataError("token_error_rate of an empty sequence");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != gold[i];
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(gold.size());
}

struct Turn {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  int label = 0;

  auto operator<=>(const Turn&) const = default;
};

// Maximal runs of identical labels.
inline std::vector<Turn> segment_turns(std::span<const int> labels) {
  std::vector<Turn> turns;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (turns.empty() || turns.back().label != labels[i])
      turns.push_back({i, i, labels[i]});
    else
      turns.back().end = i;
  }
  return turns;
}

struct TurnReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t correct = 0;
  std::size_t detected = 0;
  std::size_t actual = 0;

  TurnReport& operator+=(const TurnReport& o) {
    correct += o.correct;
    detected += o.detected;
    actual += o.actual;
    finalize();
    return *this;
  }

  void finalize() {
    precision = detected ? static_cast<double>(correct) / static_cast<double>(detected) : 0.0;
    recall = actual ? static_cast<double>(correct) / static_cast<double>(actual) : 0.0;
    f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
};

// A predicted turn is correct iff a reference turn has the same start, end
// and label. Both turn lists must cover the same number of tokens.
inline TurnReport turn_prf(std::span<const Turn> pred, std::span<const Turn> ref) {
  const std::size_t pred_tokens = pred.empty() ? 0 : pred.back().end + 1;
  const std::size_t ref_tokens = ref.empty() ? 0 : ref.back().end + 1;
  if (pred_tokens != ref_tokens)
    throw DimensionError("turn_prf: predicted turns cover " + std::to_string(pred_tokens) + " tokens, reference " +
                         std::to_string(ref_tokens));
  std::set<std::tuple<std::size_t, std::size_t, int>> ref_set;
  for (const Turn& t : ref) ref_set.emplace(t.start, t.end, t.label);
  TurnReport r;
  for (const Turn& t : pred) r.correct += ref_set.contains({t.start, t.end, t.label});
  r.detected = pred.size();
  r.actual = ref.size();
  r.finalize();
  return r;
}

inline double accuracy(std::span<const int> pred, std::span<const int> gold) {
  detail::require_same_length(pred.size(), gold.size(), "accuracy");
  if (gold.empty()) throw DataError("accuracy of an empty set");
  std::size_t right = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) right += pred[i] == gold[i];
  return 100.0 * static_cast<double>(right) / static_cast<double>(gold.size());
}

inline double joint_accuracy(std::span<const std::pair<int, int>> pred, std::span<const std::pair<int, int>> gold) {
  detail::require_same_length(pred.size(), gold.size(), "joint_accuracy");
  if (gold.empty()) throw DataError("joint accuracy of an empty set");
  std::size_t right = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) right += pred[i] == gold[i];
  return 100.0 * static_cast<double>(right) / static_cast<double>(gold.size());
}

inline nlohmann::json to_json(const TagScore& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
}

// `names` maps tag ids to display names; unnamed ids print as numbers.
inline nlohmann::json to_json(const TagReport& r, std::span<const std::string> names = {}) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [tag, score] : r.per_tag) {
    const std::string key =
        tag >= 0 && static_cast<std::size_t>(tag) < names.size() ? names[static_cast<std::size_t>(tag)] : std::to_string(tag);
    per[key] = to_json(score);
  }
  return {{"per_tag", per}, {"macro_f1", r.macro_f1}};
}

inline nlohmann::json to_json(const TurnReport& r) {
  return {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
          {"correct", r.correct},     {"detected", r.detected}, {"actual", r.actual}};
}

}  // namespace xstitch

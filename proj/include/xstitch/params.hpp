// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xstitch/rng.hpp"
#include "xstitch/tensor.hpp"

namespace xstitch {

// Handle into a ParamStore. Layout structs hold these instead of tensors so
// a whole model stays copyable by value.
struct ParamId {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t index = kNone;

  bool valid() const { return index != kNone; }
  explicit operator bool() const { return valid(); }
  bool operator==(const ParamId&) const = default;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

// Insertion-ordered named parameters with gradient slots.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor value, bool trainable = true) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
    ParamId id{entries_.size()};
    index_.emplace(name, id.index);
    Tensor grad(value.shape());
    entries_.push_back(Param{std::move(name), std::move(value), std::move(grad), trainable});
    return id;
  }

  ParamId add_normal(std::string name, Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.normal(0.0, stddev);
    return add(std::move(name), std::move(t));
  }

  ParamId add_constant(std::string name, Shape shape, double value) {
    return add(std::move(name), Tensor(std::move(shape), value));
  }

  std::size_t size() const { return entries_.size(); }

  Param& operator[](ParamId id) { return entries_.at(id.index); }
  const Param& operator[](ParamId id) const { return entries_.at(id.index); }

  const Tensor& value(ParamId id) const { return entries_.at(id.index).value; }
  Tensor& value(ParamId id) { return entries_.at(id.index).value; }
  Tensor& grad(ParamId id) { return entries_.at(id.index).grad; }
  const Tensor& grad(ParamId id) const { return entries_.at(id.index).grad; }

  std::optional<ParamId> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return ParamId{it->second};
  }

  ParamId id(std::string_view name) const {
    auto found = find(name);
    if (!found) throw ConfigError("unknown parameter: " + std::string(name));
    return *found;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad() {
    for (auto& p : entries_) p.grad.fill(0.0);
  }

  // Marks every entry whose name starts with `prefix`.
  void set_trainable(std::string_view prefix, bool trainable) {
    for (auto& p : entries_)
      if (std::string_view(p.name).starts_with(prefix)) p.trainable = trainable;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Param> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace xstitch

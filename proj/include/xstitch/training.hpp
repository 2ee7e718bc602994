// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "xstitch/model.hpp"
#include "xstitch/optimizer.hpp"

namespace xstitch {

struct TrainConfig {
  double lr = 1e-5;
  std::size_t batch_size = 2;
  std::size_t freeze_steps = 2000;
  std::size_t patience = 3;
  std::size_t max_epochs = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (patience == 0) throw ConfigError("train.patience must be positive");
    if (max_epochs == 0) throw ConfigError("train.max_epochs must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},           {"batch_size", c.batch_size}, {"freeze_steps", c.freeze_steps},
          {"patience", c.patience}, {"max_epochs", c.max_epochs}, {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.lr = j.at("lr").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.freeze_steps = j.at("freeze_steps").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
  return c;
}

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step count at the end of the epoch
  double train_loss = 0.0;
  double val_metric = 0.0;
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<double> step_losses;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
  std::size_t best_step = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  nlohmann::json best_report;
};

inline nlohmann::json to_json(const TrainResult& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.history)
    epochs.push_back({{"epoch", e.epoch},
                      {"step", e.step},
                      {"train_loss", e.train_loss},
                      {"val_metric", e.val_metric},
                      {"improved", e.improved}});
  return {{"epochs", epochs},        {"step_losses", r.step_losses}, {"steps", r.steps},
          {"best_epoch", r.best_epoch}, {"best_step", r.best_step},     {"best_metric", r.best_metric},
          {"best_report", r.best_report}};
}

struct TrainHooks {
  // Called after every optimizer step with the global step count (1-based)
  // and the batch loss.
  std::function<void(std::size_t step, double loss, const Model&)> on_step;
  // Replaces validation scoring; receives the epoch index (0-based).
  std::function<double(std::size_t epoch, const Model&)> val_metric;
};

inline Vocab build_vocab(std::span<const Utterance> train, std::size_t cap) {
  std::vector<std::vector<std::string>> sentences;
  sentences.reserve(train.size());
  for (const auto& u : train) sentences.push_back(u.tokens);
  return Vocab::build(sentences, cap == 0 ? std::numeric_limits<std::size_t>::max() : cap);
}

// Minibatch Adam over seeded per-epoch shuffles. Speech-encoder entries are
// frozen while the global step is below freeze_steps. Validation runs once
// per epoch; training stops after `patience` epochs without improvement and
// the model is left holding the best parameters seen.
inline TrainResult train(Model& model, std::span<const Utterance> train_set, std::span<const Utterance> val_set,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training split is empty");
  if (val_set.empty() && !hooks.val_metric) throw DataError("validation split is empty");

  TrainResult result;
  AdamState adam;
  adam.lr = cfg.lr;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor> best_values;
  std::size_t bad_epochs = 0;
  model.store.zero_grad();

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const bool frozen = result.steps < cfg.freeze_steps;
      model.store.set_trainable(kSpeechPrefix, !frozen);
      std::vector<Utterance> members;
      for (std::size_t i = first; i < std::min(order.size(), first + cfg.batch_size); ++i)
        members.push_back(train_set[order[i]]);
      const Batch batch = batch_pad(members, model.vocab);
      const BatchLoss bl = batch_loss(model, batch, true, frozen);
      if (!std::isfinite(bl.loss))
        throw NumericError("non-finite training loss at step " + std::to_string(result.steps + 1) + " (epoch " +
                           std::to_string(epoch) + ")");
      adam_step(model.store, adam);
      ++result.steps;
      result.step_losses.push_back(bl.loss);
      loss_sum += bl.loss;
      ++n_batches;
      if (hooks.on_step) hooks.on_step(result.steps, bl.loss, model);
    }
    model.store.set_trainable(kSpeechPrefix, true);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = result.steps;
    rec.train_loss = loss_sum / static_cast<double>(n_batches);
    nlohmann::json report;
    if (hooks.val_metric) {
      rec.val_metric = hooks.val_metric(epoch, model);
    } else {
      report = evaluate(model, val_set);
      rec.val_metric = selection_metric(report);
    }
    rec.improved = result.history.empty() || rec.val_metric > result.best_metric;
    if (rec.improved) {
      result.best_metric = rec.val_metric;
      result.best_epoch = epoch;
      result.best_step = result.steps;
      result.best_report = std::move(report);
      best_values.clear();
      for (const auto& p : model.store) best_values.push_back(p.value);
      bad_epochs = 0;
    } else {
      ++bad_epochs;
    }
    result.history.push_back(rec);
    if (bad_epochs >= cfg.patience) break;
  }

  std::size_t i = 0;
  for (auto& p : model.store) p.value = best_values[i++];
  return result;
}

}  // namespace xstitch

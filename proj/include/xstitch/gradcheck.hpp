// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "xstitch/params.hpp"
#include "xstitch/rng.hpp"

namespace xstitch {

// Evaluates the scalar loss at the store's current values. When `grads` is
// true it must also accumulate dloss/dparam into the store's gradients.
using LossFn = std::function<double(ParamStore& store, bool grads)>;

struct GradCheckEntry {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol = 0.0;
  bool pass = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  std::size_t samples = 16;  // per tensor; smaller tensors are checked fully
  std::uint64_t seed = 0;
  // Coordinates whose analytic and numeric values differ by less than the
  // rounding noise of the difference quotient, kRoundoffUlps * eps * (|L| + 1)
  // / step, pass regardless of relative error. This covers gradients that
  // are exactly zero by construction.
  bool roundoff_floor = true;
};

inline constexpr double kRoundoffUlps = 16.0;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Central differences against the analytic gradient on a random subsample
// of every trainable tensor. Values are restored exactly afterwards.
inline GradCheckReport grad_check(const LossFn& loss_fn, ParamStore& params, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  report.tol = opt.tol;
  params.zero_grad();
  const double base = loss_fn(params, true);
  if (!std::isfinite(base)) throw NumericError("grad_check: loss is non-finite at the unperturbed point");
  std::vector<Tensor> analytic;
  for (const auto& p : params) analytic.push_back(p.grad);
  params.zero_grad();

  Rng rng(opt.seed);
  std::size_t idx = 0;
  for (auto& p : params) {
    const Tensor& g = analytic[idx++];
    if (!p.trainable) continue;
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.samples) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(opt.samples);
    }
    GradCheckEntry e{p.name, coords.size(), 0.0, 0.0, true};
    const double noise =
        kRoundoffUlps * std::numeric_limits<double>::epsilon() * (std::abs(base) + 1.0) / opt.step;
    for (std::size_t c : coords) {
      const double orig = p.value[c];
      p.value[c] = orig + opt.step;
      const double up = loss_fn(params, false);
      p.value[c] = orig - opt.step;
      const double down = loss_fn(params, false);
      p.value[c] = orig;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: non-finite loss while perturbing " + p.name + "[" + std::to_string(c) + "]");
      const double numeric = (up - down) / (2.0 * opt.step);
      const double rel = relative_error(g[c], numeric);
      const double abs_err = std::abs(g[c] - numeric);
      e.max_rel_error = std::max(e.max_rel_error, rel);
      e.max_abs_error = std::max(e.max_abs_error, abs_err);
      if (rel > opt.tol && !(opt.roundoff_floor && abs_err <= noise)) e.pass = false;
    }
    report.pass = report.pass && e.pass;
    report.entries.push_back(e);
  }
  return report;
}

inline nlohmann::json to_json(const GradCheckReport& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries)
    entries.push_back(
        {{"name", e.name},
         {"coordinates", e.coordinates},
         {"max_rel_error", e.max_rel_error},
         {"max_abs_error", e.max_abs_error},
         {"pass", e.pass}});
  return {{"tol", r.tol}, {"pass", r.pass}, {"entries", entries}};
}

}  // namespace xstitch

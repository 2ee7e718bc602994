// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "xstitch/params.hpp"

namespace xstitch {

// Adam moments per parameter. Bias correction uses a per-parameter update
// count so entries that were frozen start from a fresh correction when they
// are released.
struct AdamState {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<Tensor> m, v;
  std::vector<std::uint64_t> updates;
};

// One update over every trainable entry; all gradients are zeroed afterwards.
inline void adam_step(ParamStore& params, AdamState& state) {
  const std::size_t n = params.size();
  state.m.resize(n);
  state.v.resize(n);
  state.updates.resize(n, 0);
  std::size_t idx = 0;
  for (auto& p : params) {
    if (p.grad.shape() != p.value.shape())
      throw NumericError("missing gradient for parameter " + p.name);
    if (p.trainable) {
      if (!all_finite(p.grad)) throw NumericError("non-finite gradient for parameter " + p.name);
      Tensor& m = state.m[idx];
      Tensor& v = state.v[idx];
      if (m.shape() != p.value.shape()) {
        m = Tensor(p.value.shape());
        v = Tensor(p.value.shape());
      }
      const std::uint64_t k = ++state.updates[idx];
      const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(k));
      const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(k));
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p.value[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
      }
    }
    p.grad.fill(0.0);
    ++idx;
  }
  ++state.t;
}

}  // namespace xstitch

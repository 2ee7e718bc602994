// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared generators and brute-force oracles for the unit tests. The oracles
// use plain loops and std::exp so they share no code with the library paths
// they check.
#pragma once

#include <cmath>
#include <vector>

#include "xstitch/xstitch.hpp"

namespace xstitch::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < a.cols(); ++t) s += a(i, t) * b(t, j);
      c(i, j) = s;
    }
  return c;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return worst;
}

// Softmax attention for a single head with an explicit key mask.
inline std::vector<std::vector<double>> oracle_attention(const std::vector<std::vector<double>>& q,
                                                         const std::vector<std::vector<double>>& k,
                                                         const std::vector<std::vector<double>>& v,
                                                         const std::vector<bool>& key_visible) {
  const std::size_t d = q[0].size();
  std::vector<std::vector<double>> out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> s(k.size(), 0.0);
    double mx = -1e300;
    for (std::size_t j = 0; j < k.size(); ++j) {
      if (!key_visible[j]) continue;
      for (std::size_t t = 0; t < d; ++t) s[j] += q[i][t] * k[j][t];
      s[j] /= std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j)
      if (key_visible[j]) z += std::exp(s[j] - mx);
    for (std::size_t j = 0; j < k.size(); ++j) {
      if (!key_visible[j]) continue;
      const double w = std::exp(s[j] - mx) / z;
      for (std::size_t t = 0; t < v[j].size(); ++t) out[i][t] += w * v[j][t];
    }
  }
  return out;
}

// Multi-head attention materialising W_Q^n, W_K^n, W_V^n per head and
// looping over heads, then projecting the concatenation by W_o.
inline Tensor oracle_multi_head(const ParamStore& store, const MultiHeadParams& p, const Tensor& xq,
                                const Tensor& xkv, const std::vector<bool>& key_visible) {
  const std::size_t dh = p.d_model / p.heads;
  const Tensor& wq = store.value(p.wq);
  const Tensor& wk = store.value(p.wk);
  const Tensor& wv = store.value(p.wv);
  const Tensor& wo = store.value(p.wo);
  const Tensor& bq = store.value(p.bq);
  const Tensor& bk = store.value(p.bk);
  const Tensor& bv = store.value(p.bv);
  const Tensor& bo = store.value(p.bo);
  auto project = [&](const Tensor& x, const Tensor& w, const Tensor& b, std::size_t head) {
    std::vector<std::vector<double>> out(x.rows(), std::vector<double>(dh, 0.0));
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t c = 0; c < dh; ++c) {
        double s = b[head * dh + c];
        for (std::size_t t = 0; t < x.cols(); ++t) s += x(i, t) * w(t, head * dh + c);
        out[i][c] = s;
      }
    return out;
  };
  std::vector<std::vector<double>> concat(xq.rows(), std::vector<double>(p.d_model, 0.0));
  for (std::size_t n = 0; n < p.heads; ++n) {
    const auto head = oracle_attention(project(xq, wq, bq, n), project(xkv, wk, bk, n), project(xkv, wv, bv, n),
                                       key_visible);
    for (std::size_t i = 0; i < xq.rows(); ++i)
      for (std::size_t c = 0; c < dh; ++c) concat[i][n * dh + c] = head[i][c];
  }
  Tensor out({xq.rows(), p.d_model});
  for (std::size_t i = 0; i < xq.rows(); ++i)
    for (std::size_t j = 0; j < p.d_model; ++j) {
      double s = bo[j];
      for (std::size_t t = 0; t < p.d_model; ++t) s += concat[i][t] * wo(t, j);
      out(i, j) = s;
    }
  return out;
}

// Randomises every entry of a store (biases and layer norms included) so
// gradient checks see generic values.
inline void randomize(ParamStore& store, Rng& rng, double scale) {
  for (auto& p : store)
    for (double& v : p.value.values()) v = rng.normal(0.0, scale);
}

// Fixed random projection of an output, giving a scalar loss whose gradient
// is dense and O(1).
inline Tensor probe_like(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor(t.shape(), rng);
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace xstitch::testing

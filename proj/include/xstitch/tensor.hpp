// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors and the handful of primitives the encoder
// stack is built from. Every primitive that participates in training has a
// matching *_backward function; composition happens in the owning module.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "xstitch/errors.hpp"

namespace xstitch {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    data_.assign(checked_volume(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_volume(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> flat;
    flat.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(flat));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix views: all leading extents fold into rows.
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const { return cols() ? data_.size() / cols() : 0; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols(), cols()}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols(), cols()}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool operator==(const Tensor&) const = default;

 private:
  static std::size_t checked_volume(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
      n *= e;
    }
    return n;
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline CMapMat as_mat(const Tensor& t) {
  return CMapMat(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MapMat as_mat(Tensor& t) {
  return MapMat(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
}

}  // namespace detail

// c[i][j] = sum_t a[i][t] * b[t][j]. Rank-3 operands multiply per leading index.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() == 3 && b.rank() == 3) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
      throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor c({batch, m, n});
    for (std::size_t i = 0; i < batch; ++i) {
      detail::CMapMat am(a.data() + i * m * k, m, k);
      detail::CMapMat bm(b.data() + i * k * n, k, n);
      detail::MapMat cm(c.data() + i * m * n, m, n);
      cm.noalias() = am * bm;
    }
    return c;
  }
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor c({a.rows(), b.cols()});
  detail::as_mat(c).noalias() = detail::as_mat(a) * detail::as_mat(b);
  return c;
}

// a * b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt shape mismatch: " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  Tensor c({a.rows(), b.rows()});
  detail::as_mat(c).noalias() = detail::as_mat(a) * detail::as_mat(b).transpose();
  return c;
}

// a^T * b
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_tn");
  detail::require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn shape mismatch: " + shape_string(a.shape()) + "^T x " + shape_string(b.shape()));
  Tensor c({a.cols(), b.cols()});
  detail::as_mat(c).noalias() = detail::as_mat(a).transpose() * detail::as_mat(b);
  return c;
}

// acc += a^T * b, the usual weight-gradient accumulation.
inline void accumulate_tn(Tensor& acc, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || acc.rows() != a.cols() || acc.cols() != b.cols())
    throw DimensionError("accumulate_tn shape mismatch");
  detail::as_mat(acc).noalias() += detail::as_mat(a).transpose() * detail::as_mat(b);
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline void add_inplace(Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add shape mismatch: " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

inline Tensor add(Tensor a, const Tensor& b) {
  add_inplace(a, b);
  return a;
}

inline void scale_inplace(Tensor& a, double s) {
  for (double& v : a.values()) v *= s;
}

// x[i][:] += bias for every row.
inline void add_row_vector(Tensor& x, const Tensor& bias) {
  if (bias.size() != x.cols())
    throw DimensionError("bias length " + std::to_string(bias.size()) + " does not match width " + std::to_string(x.cols()));
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

// acc[j] += sum_i x[i][j]
inline void accumulate_column_sums(Tensor& acc, const Tensor& x) {
  if (acc.size() != x.cols()) throw DimensionError("column-sum width mismatch");
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) acc[j] += r[j];
  }
}

// x * w + b for x[n x in], w[in x out], b[out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  add_row_vector(y, b);
  return y;
}

// Columns [first, first + count) of a matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t first, std::size_t count) {
  if (first + count > x.cols()) throw DimensionError("column slice out of range");
  Tensor out({x.rows(), count});
  for (std::size_t i = 0; i < x.rows(); ++i)
    std::copy_n(x.row(i).data() + first, count, out.row(i).data());
  return out;
}

inline void add_into_cols(Tensor& dst, const Tensor& src, std::size_t first) {
  if (src.rows() != dst.rows() || first + src.cols() > dst.cols()) throw DimensionError("column write out of range");
  for (std::size_t i = 0; i < src.rows(); ++i) {
    auto d = dst.row(i);
    auto s = src.row(i);
    for (std::size_t j = 0; j < s.size(); ++j) d[first + j] += s[j];
  }
}

inline Tensor softmax_rows(const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v /= sum;
  }
  return y;
}

// Gradient through y = softmax_rows(x) given y and dL/dy.
inline Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx({y.rows(), y.cols()});
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yr = y.row(i);
    auto dyr = dy.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * dyr[j];
    auto dxr = dx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) dxr[j] = yr[j] * (dyr[j] - dot);
  }
  return dx;
}

struct LayerNormCache {
  Tensor normalized;
  std::vector<double> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

// Per-row zero-mean unit-variance normalization followed by gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps,
                         LayerNormCache* cache = nullptr) {
  const std::size_t d = x.cols();
  if (gamma.size() != d || beta.size() != d)
    throw DimensionError("layer_norm affine width mismatch: x " + shape_string(x.shape()) + ", gamma " +
                         shape_string(gamma.shape()));
  Tensor y(x.shape());
  if (cache) {
    cache->normalized = Tensor(x.shape());
    cache->inv_std.assign(x.rows(), 0.0);
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    auto yr = y.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double n = (xr[j] - mean) * inv;
      if (cache) cache->normalized.row(i)[j] = n;
      yr[j] = n * gamma[j] + beta[j];
    }
    if (cache) cache->inv_std[i] = inv;
  }
  return y;
}

inline Tensor layer_norm_backward(const LayerNormCache& cache, const Tensor& gamma, const Tensor& dy, Tensor& dgamma,
                                  Tensor& dbeta) {
  const std::size_t d = dy.cols();
  const double inv_d = 1.0 / static_cast<double>(d);
  Tensor dx(dy.shape());
  std::vector<double> g(d);
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    auto dyr = dy.row(i);
    auto nr = cache.normalized.row(i);
    double sum_g = 0.0, sum_gn = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dgamma[j] += dyr[j] * nr[j];
      dbeta[j] += dyr[j];
      g[j] = dyr[j] * gamma[j];
      sum_g += g[j];
      sum_gn += g[j] * nr[j];
    }
    auto dxr = dx.row(i);
    const double inv = cache.inv_std[i];
    for (std::size_t j = 0; j < d; ++j) dxr[j] = inv * (g[j] - inv_d * sum_g - nr[j] * inv_d * sum_gn);
  }
  return dx;
}

// Exact (erf-based) GELU.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * (0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

inline Tensor gelu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = gelu(v);
  return y;
}

inline Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= gelu_derivative(x[i]);
  return dx;
}

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

inline double sum(const Tensor& t) { return std::accumulate(t.values().begin(), t.values().end(), 0.0); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace xstitch

// Copyright 2026 The geco Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense building blocks shared by the plain forward path and the tape.

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "geco/core.hpp"

namespace geco {

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EigenRowMajor>;
using MutMap = Eigen::Map<EigenRowMajor>;

inline ConstMap as_eigen(const Matrix& m) {
  return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}
inline MutMap as_eigen(Matrix& m) {
  return MutMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                static_cast<Eigen::Index>(m.cols()));
}

/// a * b.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw InputError("matmul: inner dimensions " + std::to_string(a.cols()) +
                     " and " + std::to_string(b.rows()) + " differ");
  Matrix out(a.rows(), b.cols());
  if (a.cols() == 0) return out;
  as_eigen(out).noalias() = as_eigen(a) * as_eigen(b);
  return out;
}

/// a^T * b.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw InputError("matmul_tn: row counts differ");
  Matrix out(a.cols(), b.cols());
  if (a.rows() == 0) return out;
  as_eigen(out).noalias() = as_eigen(a).transpose() * as_eigen(b);
  return out;
}

/// a * b^T.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw InputError("matmul_nt: column counts differ");
  Matrix out(a.rows(), b.rows());
  if (a.cols() == 0) return out;
  as_eigen(out).noalias() = as_eigen(a) * as_eigen(b).transpose();
  return out;
}

/// x w + b, b broadcast over rows. An empty b means no bias.
inline Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out = matmul(x, w);
  if (!b.empty()) {
    if (b.rows() != 1 || b.cols() != w.cols())
      throw InputError("affine: bias must be 1 x out_width");
    as_eigen(out).rowwise() += as_eigen(b).row(0);
  }
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw InputError("hadamard: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw InputError("add: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

inline Matrix column_sums(const Matrix& a) {
  Matrix s(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s(0, j) += a(i, j);
  return s;
}

enum class Activation { kRelu, kGelu, kSine };

inline double activate(Activation kind, double x) {
  switch (kind) {
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kGelu: return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    case Activation::kSine: return std::sin(x);
  }
  return x;
}

inline double activate_derivative(Activation kind, double x) {
  switch (kind) {
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kGelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    }
    case Activation::kSine: return std::cos(x);
  }
  return 1.0;
}

inline Matrix apply_activation(Activation kind, const Matrix& x) {
  Matrix out = x;
  for (double& v : out.values()) v = activate(kind, v);
  return out;
}

inline constexpr double kNormEps = 1e-5;

/// Per-row normalization statistics, kept for the backward pass.
struct RowStats {
  std::vector<double> mean, inv_std;
};

/// Row-wise layer normalization with per-column gamma/beta (each 1 x d).
inline Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                         RowStats* stats = nullptr) {
  const std::size_t n = x.rows(), d = x.cols();
  if (gamma.size() != d || beta.size() != d)
    throw InputError("layer_norm: scale/shift width mismatch");
  Matrix out(n, d);
  if (stats) {
    stats->mean.assign(n, 0.0);
    stats->inv_std.assign(n, 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + kNormEps);
    for (std::size_t j = 0; j < d; ++j)
      out(i, j) = (r[j] - mean) * inv_std * gamma.data()[j] + beta.data()[j];
    if (stats) {
      stats->mean[i] = mean;
      stats->inv_std[i] = inv_std;
    }
  }
  return out;
}

/// Column statistics of a batch (biased variance).
struct ColumnStats {
  std::vector<double> mean, var;
};

inline ColumnStats column_stats(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  ColumnStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  if (n == 0) return s;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x(i, j);
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x(i, j) - s.mean[j];
      s.var[j] += c * c;
    }
  for (double& v : s.var) v /= static_cast<double>(n);
  return s;
}

/// Column-wise batch normalization with the given statistics.
inline Matrix batch_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                         const ColumnStats& stats) {
  const std::size_t n = x.rows(), d = x.cols();
  if (gamma.size() != d || beta.size() != d || stats.mean.size() != d)
    throw InputError("batch_norm: width mismatch");
  Matrix out(n, d);
  std::vector<double> scale(d), shift(d);
  for (std::size_t j = 0; j < d; ++j) {
    scale[j] = gamma.data()[j] / std::sqrt(stats.var[j] + kNormEps);
    shift[j] = beta.data()[j] - stats.mean[j] * scale[j];
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = x(i, j) * scale[j] + shift[j];
  return out;
}

/// Row-wise softmax.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    auto r = p.row(i);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : r) m = std::max(m, v);
    double s = 0.0;
    for (double& v : r) s += (v = std::exp(v - m));
    for (double& v : r) v /= s;
  }
  return p;
}

}  // namespace geco

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

// Independent dense reference implementations used only by the tests. They
// deliberately avoid the library's sparse, FFT and Eigen paths.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "geco/core.hpp"
#include "geco/graph.hpp"

namespace geco::oracle {

inline Matrix dense_from_edges(const std::vector<Edge>& edges, std::size_t n) {
  Matrix a(n, n);
  for (const Edge& e : edges) a(e.src, e.dst) += e.weight;
  return a;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double acc = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += static_cast<long double>(a(i, k)) * b(k, j);
      c(i, j) = static_cast<double>(acc);
    }
  return c;
}

inline Matrix naive_transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// D^{-1/2} A D^{-1/2} computed with explicit diagonal matrices.
inline Matrix dense_sym_normalize(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix dinv(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a(i, j);
    dinv(i, i) = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  return naive_matmul(naive_matmul(dinv, a), dinv);
}

/// Permutation matrix P with P[forward[i]][i] = 1, so (P x)[forward[i]] = x[i].
inline Matrix permutation_matrix(const std::vector<std::size_t>& forward) {
  const std::size_t n = forward.size();
  Matrix p(n, n);
  for (std::size_t i = 0; i < n; ++i) p(forward[i], i) = 1.0;
  return p;
}

inline std::vector<Edge> random_edges(std::size_t n, std::size_t count, std::mt19937_64& rng,
                                      bool random_weights = true) {
  std::uniform_int_distribution<std::size_t> node(0, n - 1);
  std::uniform_real_distribution<double> w(0.1, 2.0);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < count; ++i)
    edges.push_back({node(rng), node(rng), random_weights ? w(rng) : 1.0});
  return edges;
}

/// Symmetric random graph edges (both directions).
inline std::vector<Edge> random_symmetric_edges(std::size_t n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  std::uniform_real_distribution<double> w(0.1, 2.0);
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (coin(rng)) {
        const double weight = w(rng);
        edges.push_back({u, v, weight});
        edges.push_back({v, u, weight});
      }
  return edges;
}

/// y_t = sum_i u_i z_{(t-i) mod N} with explicit modular indexing.
inline std::vector<double> circular_conv(const std::vector<double>& u,
                                         const std::vector<double>& z) {
  const std::size_t n = u.size();
  std::vector<double> y(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    long double acc = 0.0L;
    for (std::size_t i = 0; i < n; ++i)
      acc += static_cast<long double>(u[i]) * z[((t + n) - i) % n];
    y[t] = static_cast<double>(acc);
  }
  return y;
}

inline double rel_inf_error(std::span<const double> got, std::span<const double> want) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    diff = std::max(diff, std::abs(got[i] - want[i]));
    scale = std::max(scale, std::abs(want[i]));
  }
  return diff / (scale + 1.0);
}

}  // namespace geco::oracle

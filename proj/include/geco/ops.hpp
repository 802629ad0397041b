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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "geco/core.hpp"
#include "geco/graph.hpp"
#include "geco/kernels.hpp"
#include "geco/random.hpp"
#include "geco/spectral.hpp"

namespace geco {

/// Local propagation block: [H, A_hat H]. Parameter free; the graph is
/// expected to be normalized already.
inline FeatureMatrix lcb(const FeatureMatrix& h, const CsrGraph& g_norm) {
  if (g_norm.num_nodes != h.rows())
    throw InputError("lcb: graph/feature row mismatch");
  return concat_cols(h, spmm(g_norm, h));
}

/// Sinusoidal embedding of positions 0..n-1. Band j uses frequency
/// (n/2)^{j/(m-1)} cycles per n positions (m = pos_dim / 2 bands), giving
/// geometrically spaced frequencies between one cycle and the Nyquist rate.
/// An odd pos_dim adds a final t/n column.
inline Matrix positional_embedding_rows(std::size_t n, std::size_t pos_dim, std::size_t begin,
                                        std::size_t count) {
  Matrix e(count, pos_dim);
  const std::size_t bands = pos_dim / 2;
  const double len = static_cast<double>(n);
  for (std::size_t j = 0; j < bands; ++j) {
    const double freq =
        bands > 1 ? std::pow(len / 2.0, static_cast<double>(j) / static_cast<double>(bands - 1))
                  : 1.0;
    for (std::size_t r = 0; r < count; ++r) {
      const double angle = 2.0 * std::numbers::pi * freq * static_cast<double>(begin + r) / len;
      e(r, 2 * j) = std::cos(angle);
      e(r, 2 * j + 1) = std::sin(angle);
    }
  }
  if (pos_dim % 2 == 1)
    for (std::size_t r = 0; r < count; ++r)
      e(r, pos_dim - 1) = static_cast<double>(begin + r) / len;
  return e;
}

inline Matrix positional_embedding(std::size_t n, std::size_t pos_dim) {
  return positional_embedding_rows(n, pos_dim, 0, n);
}

namespace detail {

// Rows per block in the blocked affine maps; keeps each block's operands in L2.
inline constexpr std::size_t kRowBlock = 256;

/// Rows [begin, begin + y.rows()) of outs[k] = column block k of y.
inline void scatter_column_blocks(const EigenRowMajor& y, std::size_t begin,
                                  std::span<Matrix* const> outs) {
  Eigen::Index col = 0;
  for (Matrix* out : outs) {
    const auto w = static_cast<Eigen::Index>(out->cols());
    MutMap(out->data() + begin * out->cols(), y.rows(), w) = y.middleCols(col, w);
    col += w;
  }
}

}  // namespace detail

/// Implicit parametrization of K global filters: a two-layer sine MLP
/// evaluated at every position emits one tap per (filter, channel).
struct FilterBank {
  std::size_t order = 2;     // K
  std::size_t pos_dim = 16;  // d_e
  std::size_t hidden = 64;
  std::size_t channels = 0;  // d
  Matrix w1;  // pos_dim x hidden
  Matrix b1;  // 1 x hidden
  Matrix w2;  // hidden x (order * channels)
  Matrix b2;  // 1 x (order * channels)

  void validate() const {
    if (w1.rows() != pos_dim || w1.cols() != hidden || b1.size() != hidden ||
        w2.rows() != hidden || w2.cols() != order * channels || b2.size() != order * channels)
      throw ContractError("FilterBank: parameter shapes inconsistent");
  }
};

/// Uniform Glorot weights; the output layer is scaled by 1/sqrt(n_ref) so
/// initial taps are O(1/sqrt(N)).
inline FilterBank init_filter_bank(std::size_t order, std::size_t channels, std::size_t n_ref,
                                   Rng& rng, std::size_t pos_dim = 16,
                                   std::size_t hidden = 64) {
  FilterBank bank;
  bank.order = order;
  bank.pos_dim = pos_dim;
  bank.hidden = hidden;
  bank.channels = channels;
  bank.w1 = glorot_uniform(pos_dim, hidden, rng);
  bank.b1 = Matrix(1, hidden);
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, n_ref)));
  bank.w2 = glorot_uniform(hidden, order * channels, rng, out_scale);
  bank.b2 = Matrix(1, order * channels);
  return bank;
}

/// Taps of the K filters as N x d matrices (row t = position t). Evaluated
/// in row blocks so no N-row intermediate is formed.
inline std::vector<Matrix> filter_taps(const FilterBank& bank, std::size_t n) {
  bank.validate();
  std::vector<Matrix> taps(bank.order, Matrix(n, bank.channels));
  std::vector<Matrix*> outs;
  for (Matrix& t : taps) outs.push_back(&t);
  const ConstMap w1 = as_eigen(bank.w1), w2 = as_eigen(bank.w2);
  const auto b1 = as_eigen(bank.b1).row(0), b2 = as_eigen(bank.b2).row(0);
  EigenRowMajor hidden, out;
  for (std::size_t r0 = 0; r0 < n; r0 += detail::kRowBlock) {
    const std::size_t rows = std::min(detail::kRowBlock, n - r0);
    const Matrix pe = positional_embedding_rows(n, bank.pos_dim, r0, rows);
    hidden.noalias() = as_eigen(pe) * w1;
    hidden.rowwise() += b1;
    hidden = hidden.unaryExpr([](double v) { return activate(Activation::kSine, v); });
    out.noalias() = hidden * w2;
    out.rowwise() += b2;
    detail::scatter_column_blocks(out, r0, outs);
  }
  return taps;
}

inline std::vector<CircularFilterValues> generate_filters(const FilterBank& bank, std::size_t n,
                                                          std::size_t d) {
  if (d != bank.channels) throw InputError("generate_filters: channel count mismatch");
  std::vector<CircularFilterValues> filters;
  for (const Matrix& t : filter_taps(bank, n)) filters.push_back(to_filter(t));
  return filters;
}

/// Linear map R^{d_in} -> R^{(K+1) d}.
struct ProjectionWeights {
  Matrix w;  // d_in x ((K+1) d)
  Matrix b;  // 1 x ((K+1) d)
};

struct Projections {
  std::vector<Matrix> gates;  // P_1 .. P_K
  Matrix value;               // V
};

/// Affine map then split into K+1 column blocks of width d, in the order
/// P_1, ..., P_K, V.
inline Projections projection(const FeatureMatrix& x, const ProjectionWeights& p,
                              std::size_t order) {
  if (x.cols() != p.w.rows())
    throw InputError("projection: input width " + std::to_string(x.cols()) +
                     " != weight rows " + std::to_string(p.w.rows()));
  if (p.w.cols() % (order + 1) != 0)
    throw InputError("projection: output width not divisible by K+1");
  if (!p.b.empty() && (p.b.rows() != 1 || p.b.cols() != p.w.cols()))
    throw InputError("projection: bias must be 1 x output width");
  const std::size_t d = p.w.cols() / (order + 1);
  const std::size_t n = x.rows();
  Projections out;
  out.gates.assign(order, Matrix(n, d));
  out.value = Matrix(n, d);
  std::vector<Matrix*> outs;
  for (Matrix& g : out.gates) outs.push_back(&g);
  outs.push_back(&out.value);
  const ConstMap w = as_eigen(p.w);
  EigenRowMajor z;
  for (std::size_t r0 = 0; r0 < n; r0 += detail::kRowBlock) {
    const auto rows = static_cast<Eigen::Index>(std::min(detail::kRowBlock, n - r0));
    z.noalias() = ConstMap(x.data() + r0 * x.cols(), rows, static_cast<Eigen::Index>(x.cols())) * w;
    if (!p.b.empty()) z.rowwise() += as_eigen(p.b).row(0);
    detail::scatter_column_blocks(z, r0, outs);
  }
  return out;
}

struct GcbParams {
  ProjectionWeights proj;
  FilterBank filters;
  std::size_t order = 2;

  std::size_t width() const noexcept { return filters.channels; }

  void validate() const {
    filters.validate();
    if (filters.order != order ||
        proj.w.cols() != (order + 1) * filters.channels ||
        proj.b.size() != proj.w.cols())
      throw ContractError("GcbParams: projection and filter bank disagree on K or d");
  }
};

inline GcbParams init_gcb_params(std::size_t in_width, std::size_t width, std::size_t order,
                                 std::size_t n_ref, Rng& rng, std::size_t pos_dim = 16,
                                 std::size_t hidden = 64) {
  GcbParams p;
  p.order = order;
  p.proj.w = glorot_uniform(in_width, (order + 1) * width, rng);
  p.proj.b = Matrix(1, (order + 1) * width);
  p.filters = init_filter_bank(order, width, n_ref, rng, pos_dim, hidden);
  return p;
}

/// The gated convolution chain V <- P_i (.) (F_i * V), i = 1..K, with the
/// projections and filter taps given explicitly. Linear in V.
inline FeatureMatrix gcb_propagate(std::span<const Matrix> gates, Matrix value,
                                   std::span<const Matrix> taps, ExecPolicy policy = {}) {
  if (gates.size() != taps.size()) throw InputError("gcb_propagate: K mismatch");
  for (std::size_t i = 0; i < gates.size(); ++i)
    value = hadamard(gates[i], conv_columns(value, taps[i], false, policy));
  return value;
}

/// Global context block: projections, implicit filters, then the gated chain
/// with every convolution through the FFT, channels independent.
inline FeatureMatrix gcb_forward(const FeatureMatrix& x, const GcbParams& params,
                                 ExecPolicy policy = {}) {
  params.validate();
  Projections proj = projection(x, params.proj, params.order);
  const auto taps = filter_taps(params.filters, x.rows());
  return gcb_propagate(proj.gates, std::move(proj.value), taps, policy);
}

inline constexpr std::size_t kSurrogateGuard = 512;

/// Dense factors of the linear map realized by the GCB for one input:
/// per channel, output = D_{P_K} S_{F_K} ... D_{P_1} S_{F_1} v.
struct SurrogateMatrices {
  struct Channel {
    std::vector<Matrix> diag_factors;  // diag(P_k[:, c]), N x N
    std::vector<Matrix> circ_factors;  // circulant of F_k[:, c], N x N
  };
  std::size_t n = 0;
  std::size_t order = 0;
  std::vector<Channel> channels;

  /// The full N x N surrogate attention matrix of channel c.
  Matrix chain(std::size_t c) const {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    for (std::size_t k = 0; k < order; ++k)
      m = matmul(channels[c].diag_factors[k], matmul(channels[c].circ_factors[k], m));
    return m;
  }
};

/// Dense factors from explicit projections and taps (each N x d).
inline SurrogateMatrices surrogate_from_factors(std::span<const Matrix> gates,
                                                std::span<const Matrix> taps) {
  if (gates.size() != taps.size() || gates.empty())
    throw InputError("surrogate_from_factors: need K >= 1 gates and filters");
  const std::size_t n = gates.front().rows(), d = gates.front().cols();
  if (n > kSurrogateGuard)
    throw SizeError("surrogate_materialize: N=" + std::to_string(n) + " exceeds guard " +
                    std::to_string(kSurrogateGuard));
  SurrogateMatrices mats;
  mats.n = n;
  mats.order = gates.size();
  mats.channels.resize(d);
  for (std::size_t k = 0; k < mats.order; ++k) {
    if (!gates[k].same_shape(gates.front()) || !taps[k].same_shape(gates.front()))
      throw InputError("surrogate_from_factors: factor shapes differ");
    const CircularFilterValues filter = to_filter(taps[k]);
    for (std::size_t c = 0; c < d; ++c) {
      Matrix diag(n, n);
      for (std::size_t t = 0; t < n; ++t) diag(t, t) = gates[k](t, c);
      mats.channels[c].diag_factors.push_back(std::move(diag));
      mats.channels[c].circ_factors.push_back(build_circulant_matrix(filter, c));
    }
  }
  return mats;
}

inline SurrogateMatrices surrogate_materialize(const GcbParams& params, const FeatureMatrix& x) {
  if (x.rows() > kSurrogateGuard)
    throw SizeError("surrogate_materialize: N=" + std::to_string(x.rows()) +
                    " exceeds guard " + std::to_string(kSurrogateGuard));
  params.validate();
  const Projections proj = projection(x, params.proj, params.order);
  return surrogate_from_factors(proj.gates, filter_taps(params.filters, x.rows()));
}

/// Applies the dense chain right to left, channel by channel. O(N^2) per
/// factor.
inline FeatureMatrix surrogate_apply(const SurrogateMatrices& mats, const FeatureMatrix& v) {
  if (v.rows() != mats.n || v.cols() != mats.channels.size())
    throw InputError("surrogate_apply: value shape does not match factors");
  const std::size_t n = mats.n;
  FeatureMatrix out(n, v.cols());
  std::vector<double> cur(n), next(n);
  for (std::size_t c = 0; c < v.cols(); ++c) {
    for (std::size_t t = 0; t < n; ++t) cur[t] = v(t, c);
    const auto& ch = mats.channels[c];
    for (std::size_t k = 0; k < mats.order; ++k) {
      for (const Matrix* f : {&ch.circ_factors[k], &ch.diag_factors[k]}) {
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += (*f)(i, j) * cur[j];
          next[i] = acc;
        }
        std::swap(cur, next);
      }
    }
    for (std::size_t t = 0; t < n; ++t) out(t, c) = cur[t];
  }
  return out;
}

}  // namespace geco

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
#include <complex>
#include <memory>
#include <span>
#include <thread>
#include <vector>

#include "geco/core.hpp"
#include "geco/fft.hpp"

namespace geco {

/// Channel-major real data: each channel's samples are contiguous.
struct ChannelData {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  ChannelData() = default;
  ChannelData(std::size_t n, std::size_t d) : length(n), channels(d), data(n * d) {}
  ChannelData(std::size_t n, std::size_t d, std::vector<double> values)
      : length(n), channels(d), data(std::move(values)) {
    if (data.size() != n * d) throw InputError("ChannelData: size mismatch");
  }

  std::span<double> channel(std::size_t c) { return {data.data() + c * length, length}; }
  std::span<const double> channel(std::size_t c) const {
    return {data.data() + c * length, length};
  }
};

/// Input sequence u of length N with d independent channels.
struct Signal : ChannelData {
  using ChannelData::ChannelData;
};

/// Global filter taps z_t, one length-N filter per channel.
struct CircularFilterValues : ChannelData {
  using ChannelData::ChannelData;
};

struct ExecPolicy {
  unsigned threads = 1;
};

namespace detail {

inline void check_conv_operands(const ChannelData& u, const ChannelData& z) {
  if (u.length != z.length)
    throw InputError("circular convolution: signal length " + std::to_string(u.length) +
                     " != filter length " + std::to_string(z.length));
  if (u.channels != z.channels)
    throw InputError("circular convolution: channel counts differ");
}

/// y_t = sum_i u_i z_{(t - i) mod n}, O(n^2).
inline void conv_direct_channel(std::span<const double> u, std::span<const double> z,
                                std::span<double> y) {
  const std::size_t n = u.size();
  for (std::size_t t = 0; t < n; ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i <= t; ++i) acc += u[i] * z[t - i];
    for (std::size_t i = t + 1; i < n; ++i) acc += u[i] * z[t + n - i];
    y[t] = acc;
  }
}

/// dst (cols x rows) = src (rows x cols)^T, both row-major, in cache tiles.
inline void transpose_blocked(const double* src, double* dst, std::size_t rows,
                              std::size_t cols) {
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kTile) {
    const std::size_t i1 = std::min(rows, i0 + kTile);
    for (std::size_t j0 = 0; j0 < cols; j0 += kTile) {
      const std::size_t j1 = std::min(cols, j0 + kTile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
  }
}

/// Runs `body(first, last)` over [0, count) split into `threads` chunks.
template <typename Body>
void parallel_chunks(std::size_t count, unsigned threads, Body&& body) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads <= 1) {
    body(std::size_t{0}, count);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (count + threads - 1) / threads;
  for (unsigned w = 0; w < threads; ++w) {
    const std::size_t first = w * chunk;
    const std::size_t last = std::min(count, first + chunk);
    if (first >= last) break;
    pool.emplace_back([&body, first, last] { body(first, last); });
  }
}

/// FFT convolution (or correlation) of two real channels at once. The pair
/// is packed as the real and imaginary parts of one complex sequence and the
/// two spectra are separated through conjugate symmetry, so a pair costs three
/// transforms instead of six. u2/z2/y2 may be empty for an odd channel.
class PairConvolver {
 public:
  explicit PairConvolver(std::size_t n)
      : plan_(fft_plan(n)), a_(n), b_(n) {}

  void run(std::span<const double> u1, std::span<const double> z1,
           std::span<const double> u2, std::span<const double> z2,
           std::span<double> y1, std::span<double> y2, bool correlate) {
    const std::size_t n = plan_->size();
    const bool second = !u2.empty();
    for (std::size_t t = 0; t < n; ++t) {
      a_[t] = {u1[t], second ? u2[t] : 0.0};
      b_[t] = {z1[t], second ? z2[t] : 0.0};
    }
    const bool scrambled = plan_->has_scrambled();
    if (scrambled) {
      plan_->forward_scrambled(a_);
      plan_->forward_scrambled(b_);
    } else {
      plan_->forward(a_);
      plan_->forward(b_);
    }
    // Bins k and its mirror N-k read each other, so each unordered pair is
    // combined once and the product is written back into a_.
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t km = scrambled ? plan_->scrambled_partner(k) : (k == 0 ? 0 : n - k);
      if (km < k) continue;
      const Complex ak = a_[k], am = a_[km], bk = b_[k], bm = b_[km];
      a_[k] = product(ak, am, bk, bm, correlate);
      if (km != k) a_[km] = product(am, ak, bm, bk, correlate);
    }
    if (scrambled)
      plan_->inverse_scrambled(a_);
    else
      plan_->inverse(a_);
    for (std::size_t t = 0; t < n; ++t) {
      y1[t] = a_[t].real();
      if (second) y2[t] = a_[t].imag();
    }
  }

 private:
  // Spectrum bin of (u1 * z1) + i (u2 * z2) given the packed spectra at the
  // bin (x, z) and at its mirror (xm, zm).
  static Complex product(Complex x, Complex xm, Complex z, Complex zm, bool correlate) {
    const Complex xb = std::conj(xm), zb = std::conj(zm);
    const Complex u_re = 0.5 * (x + xb);
    const Complex u_im = Complex(0.0, -0.5) * (x - xb);
    Complex f_re = 0.5 * (z + zb);
    Complex f_im = Complex(0.0, -0.5) * (z - zb);
    if (correlate) {
      f_re = std::conj(f_re);
      f_im = std::conj(f_im);
    }
    const Complex y_im = cmul(u_im, f_im);
    return cmul(u_re, f_re) + Complex(-y_im.imag(), y_im.real());
  }

  std::shared_ptr<const FftPlan> plan_;
  std::vector<Complex> a_, b_;
};

template <typename Signalish>
Signalish conv_fft_impl(const ChannelData& u, const ChannelData& z, bool correlate,
                        ExecPolicy policy) {
  check_conv_operands(u, z);
  Signalish y;
  static_cast<ChannelData&>(y) = ChannelData(u.length, u.channels);
  if (u.length == 0) return y;
  const std::size_t pairs = (u.channels + 1) / 2;
  parallel_chunks(pairs, policy.threads, [&](std::size_t first, std::size_t last) {
    PairConvolver conv(u.length);
    for (std::size_t p = first; p < last; ++p) {
      const std::size_t c = 2 * p;
      const bool two = c + 1 < u.channels;
      conv.run(u.channel(c), z.channel(c),
               two ? u.channel(c + 1) : std::span<const double>{},
               two ? z.channel(c + 1) : std::span<const double>{}, y.channel(c),
               two ? y.channel(c + 1) : std::span<double>{}, correlate);
    }
  });
  return y;
}

}  // namespace detail

/// Reference O(N^2) circular convolution, channel by channel.
inline Signal circular_conv_direct(const Signal& u, const CircularFilterValues& z) {
  detail::check_conv_operands(u, z);
  Signal y(u.length, u.channels);
  for (std::size_t c = 0; c < u.channels; ++c)
    detail::conv_direct_channel(u.channel(c), z.channel(c), y.channel(c));
  return y;
}

/// Circular convolution at exactly length N through the DFT.
inline Signal circular_conv_fft(const Signal& u, const CircularFilterValues& z,
                                ExecPolicy policy = {}) {
  return detail::conv_fft_impl<Signal>(u, z, false, policy);
}

/// y_t = sum_i u_i z_{(i - t) mod N}: the adjoint of convolution by z.
inline Signal circular_corr_fft(const Signal& u, const CircularFilterValues& z,
                                ExecPolicy policy = {}) {
  return detail::conv_fft_impl<Signal>(u, z, true, policy);
}

/// z_{(-t) mod N} per channel; correlation with z equals convolution with it.
inline CircularFilterValues reverse_mod_n(const CircularFilterValues& z) {
  CircularFilterValues r(z.length, z.channels);
  for (std::size_t c = 0; c < z.channels; ++c)
    for (std::size_t t = 0; t < z.length; ++t)
      r.channel(c)[t] = z.channel(c)[(z.length - t) % z.length];
  return r;
}

inline constexpr std::size_t kCirculantGuard = 4096;

/// S[i][j] = z_{(i - j) mod N} for one channel.
inline Matrix build_circulant_matrix(const CircularFilterValues& z, std::size_t channel) {
  if (z.length > kCirculantGuard)
    throw SizeError("build_circulant_matrix: N=" + std::to_string(z.length) +
                    " exceeds guard " + std::to_string(kCirculantGuard));
  if (channel >= z.channels) throw InputError("build_circulant_matrix: bad channel");
  const std::size_t n = z.length;
  const auto taps = z.channel(channel);
  Matrix s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s(i, j) = taps[(i + n - j) % n];
  return s;
}

// Row-major matrices whose columns are channels. These are what the
// operator layers use; they avoid materializing channel-major copies.

inline Signal to_signal(const Matrix& m) {
  Signal s(m.rows(), m.cols());
  for (std::size_t t = 0; t < m.rows(); ++t)
    for (std::size_t c = 0; c < m.cols(); ++c) s.channel(c)[t] = m(t, c);
  return s;
}

inline CircularFilterValues to_filter(const Matrix& m) {
  CircularFilterValues f;
  static_cast<ChannelData&>(f) = to_signal(m);
  return f;
}

inline Matrix to_matrix(const ChannelData& s) {
  Matrix m(s.length, s.channels);
  for (std::size_t t = 0; t < s.length; ++t)
    for (std::size_t c = 0; c < s.channels; ++c) m(t, c) = s.channel(c)[t];
  return m;
}

/// Column-wise circular convolution (or correlation) of u by z, both N x d.
inline Matrix conv_columns(const Matrix& u, const Matrix& z, bool correlate = false,
                           ExecPolicy policy = {}) {
  if (!u.same_shape(z))
    throw InputError("conv_columns: operand shapes differ");
  const std::size_t n = u.rows(), d = u.cols();
  if (n == 0 || d == 0) return Matrix(n, d);
  // Channel-major copies make every channel contiguous for the transforms.
  // Left uninitialized: every element is written before it is read.
  const std::unique_ptr<double[]> uc(new double[n * d]), zc(new double[n * d]),
      yc(new double[n * d]);
  detail::transpose_blocked(u.data(), uc.get(), n, d);
  detail::transpose_blocked(z.data(), zc.get(), n, d);
  auto column = [n](const auto& m, std::size_t c) { return std::span(m.get() + c * n, n); };
  const std::size_t pairs = (d + 1) / 2;
  detail::parallel_chunks(pairs, policy.threads, [&](std::size_t first, std::size_t last) {
    detail::PairConvolver conv(n);
    for (std::size_t p = first; p < last; ++p) {
      const std::size_t c = 2 * p;
      const bool two = c + 1 < d;
      conv.run(column(uc, c), column(zc, c),
               two ? column(uc, c + 1) : std::span<const double>{},
               two ? column(zc, c + 1) : std::span<const double>{}, column(yc, c),
               two ? column(yc, c + 1) : std::span<double>{}, correlate);
    }
  });
  Matrix y(n, d);
  detail::transpose_blocked(yc.get(), y.data(), d, n);
  return y;
}

}  // namespace geco

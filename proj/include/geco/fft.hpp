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

#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "geco/core.hpp"

namespace geco {

using Complex = std::complex<double>;

namespace detail {

inline Complex cmul(Complex a, Complex b) noexcept {
  return {a.real() * b.real() - a.imag() * b.imag(),
          a.real() * b.imag() + a.imag() * b.real()};
}

}  // namespace detail

/// Discrete Fourier transform of one fixed length. Powers of two run a
/// depth-first radix-2 kernel (decimation in frequency forward, decimation in
/// time inverse); every other length goes through Bluestein's chirp-z
/// reformulation on a power-of-two grid, so the transform length is always
/// exactly n. A plan is immutable after construction and can be shared
/// between threads.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    if (n == 0) throw InputError("FftPlan: length must be positive");
    if (std::has_single_bit(n)) {
      init_radix2(n);
      partner_.resize(n);
      for (std::size_t p = 0; p < n; ++p)
        partner_[p] = bitrev_[(n - bitrev_[p]) % n];
      return;
    }
    init_radix2(std::bit_ceil(2 * n - 1));
    chirp_.resize(n);
    const std::uint64_t two_n = 2 * static_cast<std::uint64_t>(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint64_t k2 = (static_cast<std::uint64_t>(k) * k) % two_n;
      const double angle =
          -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
      chirp_[k] = {std::cos(angle), std::sin(angle)};
    }
    kernel_.assign(work_, Complex{});
    kernel_[0] = std::conj(chirp_[0]);
    for (std::size_t k = 1; k < n; ++k)
      kernel_[k] = kernel_[work_ - k] = std::conj(chirp_[k]);
    // Kept in the scrambled order the forward kernel produces.
    dif(kernel_.data(), work_);
  }

  std::size_t size() const noexcept { return n_; }

  /// In-place unnormalized forward transform, X_k = sum_t x_t e^{-2 pi i kt/n}.
  void forward(std::span<Complex> data) const {
    check(data);
    if (chirp_.empty()) {
      dif(data.data(), n_);
      bit_reverse(data.data());
    } else {
      bluestein(data);
    }
  }

  /// In-place inverse transform including the 1/n scale.
  void inverse(std::span<Complex> data) const {
    check(data);
    if (chirp_.empty()) {
      bit_reverse(data.data());
      dit(data.data(), n_);
    } else {
      for (auto& v : data) v = std::conj(v);
      bluestein(data);
      for (auto& v : data) v = std::conj(v);
    }
    const double scale = 1.0 / static_cast<double>(n_);
    for (auto& v : data) v *= scale;
  }

  /// True when the scrambled-order entry points are available (power-of-two
  /// lengths). Convolutions only need pointwise spectral products, so they
  /// can skip both bit-reversal passes.
  bool has_scrambled() const noexcept { return chirp_.empty(); }

  /// Forward transform leaving X in bit-reversed order.
  void forward_scrambled(std::span<Complex> data) const {
    check(data);
    dif(data.data(), n_);
  }

  /// Inverse of forward_scrambled, 1/n scale included.
  void inverse_scrambled(std::span<Complex> data) const {
    check(data);
    dit(data.data(), n_);
    const double scale = 1.0 / static_cast<double>(n_);
    for (auto& v : data) v *= scale;
  }

  /// Scrambled position of X_{(n-k) mod n}, given the position of X_k.
  std::size_t scrambled_partner(std::size_t pos) const noexcept { return partner_[pos]; }

 private:
  static constexpr std::size_t kLeaf = 1024;

  void check(std::span<Complex> data) const {
    if (data.size() != n_) throw InputError("FftPlan: buffer length mismatch");
  }

  void init_radix2(std::size_t m) {
    work_ = m;
    // twiddles_[len/2 + j] = e^{-2 pi i j / len} for every power of two len.
    twiddles_.assign(std::max<std::size_t>(m, 1), Complex{});
    for (std::size_t len = 2; len <= m; len <<= 1)
      for (std::size_t j = 0; j < len / 2; ++j) {
        const double angle = -2.0 * std::numbers::pi * static_cast<double>(j) /
                             static_cast<double>(len);
        twiddles_[len / 2 + j] = {std::cos(angle), std::sin(angle)};
      }
    bitrev_.resize(m);
    const int bits = std::countr_zero(m);
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      bitrev_[i] = static_cast<std::uint32_t>(r);
    }
  }

  void bit_reverse(Complex* a) const {
    for (std::size_t i = 0; i < work_; ++i)
      if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
  }

  // One decimation-in-frequency stage over a block of length len.
  void dif_stage(Complex* a, std::size_t len) const {
    const std::size_t half = len / 2;
    const Complex* w = twiddles_.data() + half;
    Complex* lo = a;
    Complex* hi = a + half;
    for (std::size_t j = 0; j < half; ++j) {
      const double xr = lo[j].real(), xi = lo[j].imag();
      const double yr = hi[j].real(), yi = hi[j].imag();
      const double dr = xr - yr, di = xi - yi;
      lo[j] = {xr + yr, xi + yi};
      hi[j] = {dr * w[j].real() - di * w[j].imag(), dr * w[j].imag() + di * w[j].real()};
    }
  }

  // One decimation-in-time stage with conjugated twiddles.
  void dit_stage(Complex* a, std::size_t len) const {
    const std::size_t half = len / 2;
    const Complex* w = twiddles_.data() + half;
    Complex* lo = a;
    Complex* hi = a + half;
    for (std::size_t j = 0; j < half; ++j) {
      const double wr = w[j].real(), wi = -w[j].imag();
      const double yr = hi[j].real() * wr - hi[j].imag() * wi;
      const double yi = hi[j].real() * wi + hi[j].imag() * wr;
      const double xr = lo[j].real(), xi = lo[j].imag();
      lo[j] = {xr + yr, xi + yi};
      hi[j] = {xr - yr, xi - yi};
    }
  }

  // Natural order in, bit-reversed order out. Depth-first so that once a
  // sub-block fits in cache every remaining stage stays there.
  void dif(Complex* a, std::size_t n) const {
    if (n < 2) return;
    if (n <= kLeaf) {
      for (std::size_t len = n; len >= 2; len >>= 1)
        for (std::size_t base = 0; base < n; base += len) dif_stage(a + base, len);
      return;
    }
    dif_stage(a, n);
    dif(a, n / 2);
    dif(a + n / 2, n / 2);
  }

  // Bit-reversed order in, natural order out, unscaled inverse.
  void dit(Complex* a, std::size_t n) const {
    if (n < 2) return;
    if (n <= kLeaf) {
      for (std::size_t len = 2; len <= n; len <<= 1)
        for (std::size_t base = 0; base < n; base += len) dit_stage(a + base, len);
      return;
    }
    dit(a, n / 2);
    dit(a + n / 2, n / 2);
    dit_stage(a, n);
  }

  void bluestein(std::span<Complex> data) const {
    std::vector<Complex> buf(work_, Complex{});
    for (std::size_t k = 0; k < n_; ++k) buf[k] = detail::cmul(data[k], chirp_[k]);
    dif(buf.data(), work_);
    for (std::size_t k = 0; k < work_; ++k) buf[k] = detail::cmul(buf[k], kernel_[k]);
    dit(buf.data(), work_);
    const double scale = 1.0 / static_cast<double>(work_);
    for (std::size_t k = 0; k < n_; ++k)
      data[k] = detail::cmul(buf[k], chirp_[k]) * scale;
  }

  std::size_t n_ = 0;
  std::size_t work_ = 0;
  std::vector<Complex> twiddles_;
  std::vector<std::uint32_t> bitrev_;
  std::vector<std::uint32_t> partner_;
  std::vector<Complex> chirp_;
  std::vector<Complex> kernel_;
};

/// Process-wide plan cache; lookups are serialized, plans are shared
/// read-only.
inline std::shared_ptr<const FftPlan> fft_plan(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::shared_ptr<const FftPlan>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_shared<const FftPlan>(n);
  return slot;
}

}  // namespace geco

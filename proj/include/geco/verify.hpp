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

// Self-checks shared by the command-line oracle runner: FFT against direct
// convolution, and the gated chain against its materialized matrices.

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "geco/core.hpp"
#include "geco/ops.hpp"
#include "geco/random.hpp"
#include "geco/spectral.hpp"

namespace geco {

/// max |fft - direct| / max(max |direct|, tiny) over random N x d inputs.
inline double conv_oracle_error(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x434f4e56, n, d});
  const Matrix u = random_normal(n, d, rng), z = random_normal(n, d, rng);
  const Signal direct = circular_conv_direct(to_signal(u), to_filter(z));
  const Signal fft = circular_conv_fft(to_signal(u), to_filter(z));
  const double scale = std::max(max_abs(direct.data), 1e-300);
  return max_abs_diff(fft.data, direct.data) / scale;
}

/// max |gcb_forward(x) - surrogate chain applied to V| for random parameters.
inline double surrogate_oracle_error(std::size_t n, std::size_t d, std::size_t k,
                                     std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x53555252, n, d, k});
  const std::size_t in_width = d + 1;
  GcbParams p = init_gcb_params(in_width, d, k, n, rng, 8, 16);
  p.proj.b = random_normal(1, p.proj.b.cols(), rng, 0.3);
  p.filters.b1 = random_normal(1, p.filters.hidden, rng, 0.3);
  const Matrix x = random_normal(n, in_width, rng);
  const Matrix y = gcb_forward(x, p);
  const SurrogateMatrices mats = surrogate_materialize(p, x);
  const Matrix v = projection(x, p.proj, k).value;
  return max_abs_diff(surrogate_apply(mats, v), y);
}

}  // namespace geco

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

// Scaling benchmark: one GECO layer forward against dense single-head
// attention on Erdős–Rényi graphs of doubling size.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <malloc.h>
#include <istream>
#include <new>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "geco/core.hpp"
#include "geco/graph.hpp"
#include "geco/io.hpp"
#include "geco/model.hpp"
#include "geco/random.hpp"

namespace geco {

struct BenchOptions {
  std::size_t min_log2 = 9;
  std::size_t max_log2 = 17;
  std::size_t features = 108;
  std::optional<double> sparsity;  // empty: 10/N
  std::size_t reps = 3;
  std::size_t dense_reps = 0;  // 0: same as reps
  bool dense_warmup = true;
  std::uint64_t seed = 0;
  ExecPolicy policy{};
  /// Largest N for which the dense baseline runs; larger rows record a skip.
  std::size_t dense_max_n = std::size_t{1} << 17;
  std::size_t attention_tile = 64;

  void validate() const {
    if (min_log2 > max_log2) throw InputError("bench: min_log2 > max_log2");
    if (max_log2 > 30) throw InputError("bench: max_log2 above 30");
    if (features == 0) throw InputError("bench: features must be > 0");
    if (reps == 0) throw InputError("bench: reps must be > 0");
    if (sparsity && !(*sparsity >= 0.0 && *sparsity <= 1.0))
      throw InputError("bench: sparsity must be in [0, 1]");
  }
};

struct BenchRow {
  std::size_t n = 0;
  double geco_ms = 0.0;
  std::optional<double> dense_ms;
  std::optional<double> speedup;  // dense_ms / geco_ms
  std::size_t reps = 0;
  double stddev_ms = 0.0;  // of the GECO timings
  std::string skip_reason;  // set when the dense baseline did not run

  friend bool operator==(const BenchRow&, const BenchRow&) = default;
};

struct TimingStats {
  double median_ms = 0.0;
  double stddev_ms = 0.0;
};

inline TimingStats summarize(std::vector<double> ms) {
  if (ms.empty()) throw InputError("summarize: no samples");
  std::sort(ms.begin(), ms.end());
  const std::size_t m = ms.size();
  const double median = m % 2 ? ms[m / 2] : 0.5 * (ms[m / 2 - 1] + ms[m / 2]);
  const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(m);
  double ss = 0.0;
  for (double v : ms) ss += (v - mean) * (v - mean);
  return {median, m > 1 ? std::sqrt(ss / static_cast<double>(m - 1)) : 0.0};
}

/// Runs `fn` once untimed (if warmup) and then `reps` timed times.
template <typename Fn>
TimingStats time_ms(Fn&& fn, std::size_t reps, bool warmup = true) {
  using Clock = std::chrono::steady_clock;
  if (warmup) fn();
  std::vector<double> ms;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    fn();
    ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  return summarize(std::move(ms));
}

/// Inputs for one benchmark size, a pure function of (n, options).
struct BenchWorkload {
  CsrGraph g_norm;
  FeatureMatrix x;
  GecoLayerParams layer;
  Matrix wq, wk, wv;
};

inline BenchWorkload make_workload(std::size_t n, const BenchOptions& opts) {
  SyntheticGraphSpec spec;
  spec.num_nodes = n;
  spec.sparsity = opts.sparsity.value_or(SyntheticGraphSpec::auto_sparsity(n));
  spec.feature_dim = opts.features;
  spec.seed = opts.seed;
  GeneratedGraph gen = gen_erdos_renyi(spec);
  BenchWorkload w;
  w.g_norm = normalize_symmetric(gen.graph);
  w.x = std::move(gen.features);
  Rng rng = make_rng(opts.seed, {0x42454e43, n});
  ModelConfig cfg;
  w.layer = init_geco_layer(opts.features, cfg, n, rng);
  const std::size_t d = opts.features;
  w.wq = glorot_uniform(d, d, rng);
  w.wk = glorot_uniform(d, d, rng);
  w.wv = glorot_uniform(d, d, rng);
  return w;
}

using BenchProgress = std::function<void(const BenchRow&)>;

/// Timings are taken in rounds over all sizes (every size once per round) so
/// that slow drifts of machine load spread across sizes instead of biasing one.
inline std::vector<BenchRow> run_scaling(const BenchOptions& opts, const BenchProgress& progress = {}) {
  using Clock = std::chrono::steady_clock;
  opts.validate();
  std::vector<BenchWorkload> work;
  std::vector<BenchRow> rows;
  for (std::size_t lg = opts.min_log2; lg <= opts.max_log2; ++lg) {
    const std::size_t n = std::size_t{1} << lg;
    work.push_back(make_workload(n, opts));
    BenchRow row;
    row.n = n;
    row.reps = opts.reps;
    if (n > opts.dense_max_n) row.skip_reason = "N above dense memory guard " + std::to_string(opts.dense_max_n);
    rows.push_back(row);
  }
  volatile double sink = 0.0;
  auto geco = [&](std::size_t i) {
    const BenchWorkload& w = work[i];
    const auto t0 = Clock::now();
    sink = sink + geco_layer_forward(w.x, w.g_norm, w.layer, false, nullptr, opts.policy)(0, 0);
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };
  // Dense timings; a failed allocation marks the row instead of aborting.
  auto dense = [&](std::size_t i) -> std::optional<double> {
    const BenchWorkload& w = work[i];
    try {
      const auto t0 = Clock::now();
      sink = sink + dense_attention_forward(w.x, w.wq, w.wk, w.wv, opts.attention_tile)(0, 0);
      return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    } catch (const std::bad_alloc&) {
      rows[i].skip_reason = "allocation failure";
      return std::nullopt;
    }
  };
  auto dense_ok = [&](std::size_t i) { return rows[i].skip_reason.empty(); };

  std::vector<std::vector<double>> geco_ms(rows.size()), dense_ms(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) geco(i);
  for (std::size_t r = 0; r < opts.reps; ++r)
    for (std::size_t i = 0; i < rows.size(); ++i) geco_ms[i].push_back(geco(i));
  const std::size_t dense_reps = opts.dense_reps ? opts.dense_reps : opts.reps;
  if (opts.dense_warmup)
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (dense_ok(i)) dense(i);
  for (std::size_t r = 0; r < dense_reps; ++r)
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (dense_ok(i))
        if (auto ms = dense(i)) dense_ms[i].push_back(*ms);

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const TimingStats g = summarize(geco_ms[i]);
    rows[i].geco_ms = g.median_ms;
    rows[i].stddev_ms = g.stddev_ms;
    if (dense_ok(i) && !dense_ms[i].empty()) {
      rows[i].dense_ms = summarize(dense_ms[i]).median_ms;
      rows[i].speedup = *rows[i].dense_ms / rows[i].geco_ms;
    }
    if (progress) progress(rows[i]);
  }
  return rows;
}

/// Keeps large blocks on the reusable heap instead of fresh kernel mappings,
/// so timed regions measure compute rather than first-touch page faults.
/// Affects the whole process; call once from a benchmarking executable.
inline bool use_heap_for_large_allocations() {
#if defined(__GLIBC__)
  return mallopt(M_MMAP_MAX, 0) == 1 && mallopt(M_TRIM_THRESHOLD, 1 << 30) == 1;
#else
  return false;
#endif
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kBenchHeader = "n,geco_ms,dense_ms,speedup,reps,stddev_ms";

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// First "model name" from /proc/cpuinfo, or "unknown".
inline std::string hardware_tag() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) break;
      std::string tag = line.substr(colon + 1);
      tag.erase(0, tag.find_first_not_of(' '));
      std::replace(tag.begin(), tag.end(), ',', ' ');
      return tag;
    }
  }
  return "unknown";
}

struct BenchMetadata {
  std::string hardware = hardware_tag();
  std::size_t threads = 1;
  std::size_t features = 108;
  std::uint64_t seed = 0;
};

inline std::string metadata_line(const BenchMetadata& m) {
  std::ostringstream os;
  os << "# hardware=" << m.hardware << "; threads=" << m.threads
     << (m.threads > 1 ? " (channel-parallel)" : " (single-threaded)")
     << "; dtype=f64; features=" << m.features << "; seed=" << m.seed
     << "; baseline=dense single-head softmax(QK^T/sqrt(d))V";
  return os.str();
}

inline void emit_csv(std::ostream& os, const std::vector<BenchRow>& rows,
                     const std::optional<BenchMetadata>& meta = std::nullopt) {
  if (meta) os << metadata_line(*meta) << '\n';
  os << kBenchHeader << '\n';
  for (const BenchRow& r : rows) {
    os << r.n << ',' << format_double(r.geco_ms) << ','
       << (r.dense_ms ? format_double(*r.dense_ms) : "") << ','
       << (r.speedup ? format_double(*r.speedup) : "") << ',' << r.reps << ','
       << format_double(r.stddev_ms) << '\n';
  }
  if (!os) throw IoError("emit_csv: write failed");
}

inline void emit_csv(const std::string& path, const std::vector<BenchRow>& rows,
                     const std::optional<BenchMetadata>& meta = std::nullopt) {
  auto os = open_out(path);
  emit_csv(os, rows, meta);
}

namespace detail {

inline double parse_double_field(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError("bench csv: bad number '" + std::string(s) + "'");
  return v;
}

inline std::size_t parse_size_field(std::string_view s) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError("bench csv: bad count '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

/// Inverse of emit_csv; "#" lines are skipped. Skip reasons are not stored
/// in the file and come back empty.
inline std::vector<BenchRow> parse_csv(std::istream& is) {
  std::vector<BenchRow> rows;
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kBenchHeader) throw InputError("bench csv: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    std::vector<std::string_view> f;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (f.size() != 6) throw InputError("bench csv: expected 6 fields in '" + line + "'");
    BenchRow r;
    r.n = detail::parse_size_field(f[0]);
    r.geco_ms = detail::parse_double_field(f[1]);
    if (!f[2].empty()) r.dense_ms = detail::parse_double_field(f[2]);
    if (!f[3].empty()) r.speedup = detail::parse_double_field(f[3]);
    r.reps = detail::parse_size_field(f[4]);
    r.stddev_ms = detail::parse_double_field(f[5]);
    rows.push_back(r);
  }
  if (!header) throw InputError("bench csv: missing header");
  return rows;
}

// ---------------------------------------------------------------------------
// Trend analysis

struct ScalingTrend {
  std::vector<double> geco_ratios;   // time(2N) / time(N)
  std::vector<double> dense_ratios;  // over rows where the baseline ran
  bool speedup_monotone_tail = false;  // last `tail` doublings with a baseline
  std::optional<std::size_t> crossover_n;  // first N with speedup > 1
};

inline ScalingTrend analyze_scaling(const std::vector<BenchRow>& rows, std::size_t tail = 4) {
  ScalingTrend t;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    t.geco_ratios.push_back(rows[i].geco_ms / rows[i - 1].geco_ms);
    if (rows[i].dense_ms && rows[i - 1].dense_ms)
      t.dense_ratios.push_back(*rows[i].dense_ms / *rows[i - 1].dense_ms);
  }
  std::vector<double> speedups;
  for (const BenchRow& r : rows) {
    if (!r.speedup) continue;
    speedups.push_back(*r.speedup);
    if (!t.crossover_n && *r.speedup > 1.0) t.crossover_n = r.n;
  }
  if (speedups.size() >= tail + 1) {
    t.speedup_monotone_tail = true;
    for (std::size_t i = speedups.size() - tail; i < speedups.size(); ++i)
      t.speedup_monotone_tail = t.speedup_monotone_tail && speedups[i] >= speedups[i - 1];
  }
  return t;
}

}  // namespace geco

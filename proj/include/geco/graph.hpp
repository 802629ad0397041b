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
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "geco/core.hpp"
#include "geco/random.hpp"

namespace geco {

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double weight = 1.0;
};

/// Sparse adjacency in canonical compressed-row form: row offsets are
/// non-decreasing and column indices strictly increase within each row.
struct CsrGraph {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> row_offsets{0};
  std::vector<std::size_t> col_indices;
  std::vector<double> values;

  std::size_t num_edges() const noexcept { return col_indices.size(); }
  std::size_t degree(std::size_t v) const noexcept {
    return row_offsets[v + 1] - row_offsets[v];
  }

  /// Throws InputError describing the first violated invariant.
  void validate() const {
    if (row_offsets.size() != num_nodes + 1 || row_offsets.front() != 0 ||
        row_offsets.back() != col_indices.size() ||
        values.size() != col_indices.size())
      throw InputError("CsrGraph: inconsistent array sizes");
    for (std::size_t v = 0; v < num_nodes; ++v) {
      if (row_offsets[v] > row_offsets[v + 1])
        throw InputError("CsrGraph: row offsets decrease at row " +
                         std::to_string(v));
      for (std::size_t e = row_offsets[v]; e < row_offsets[v + 1]; ++e) {
        if (col_indices[e] >= num_nodes)
          throw InputError("CsrGraph: column index out of range");
        if (e > row_offsets[v] && col_indices[e] <= col_indices[e - 1])
          throw InputError("CsrGraph: row " + std::to_string(v) +
                           " not strictly increasing");
      }
    }
  }

  friend bool operator==(const CsrGraph&, const CsrGraph&) = default;
};

/// Canonical CSR from an edge list. Duplicate (src, dst) pairs are merged by
/// summing their weights.
inline CsrGraph build_csr(std::vector<Edge> edges, std::size_t num_nodes) {
  for (const Edge& e : edges)
    if (e.src >= num_nodes || e.dst >= num_nodes)
      throw InputError("build_csr: edge (" + std::to_string(e.src) + ", " +
                       std::to_string(e.dst) + ") out of range for " +
                       std::to_string(num_nodes) + " nodes");
  std::stable_sort(edges.begin(), edges.end(),
                   [](const Edge& a, const Edge& b) {
                     return a.src != b.src ? a.src < b.src : a.dst < b.dst;
                   });
  CsrGraph g;
  g.num_nodes = num_nodes;
  g.row_offsets.assign(num_nodes + 1, 0);
  g.col_indices.reserve(edges.size());
  g.values.reserve(edges.size());
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Edge& e = edges[i];
    if (i > 0 && edges[i - 1].src == e.src && edges[i - 1].dst == e.dst) {
      g.values.back() += e.weight;
      continue;
    }
    g.col_indices.push_back(e.dst);
    g.values.push_back(e.weight);
    ++g.row_offsets[e.src + 1];
  }
  std::partial_sum(g.row_offsets.begin(), g.row_offsets.end(),
                   g.row_offsets.begin());
  return g;
}

inline Matrix to_dense(const CsrGraph& g) {
  Matrix a(g.num_nodes, g.num_nodes);
  for (std::size_t v = 0; v < g.num_nodes; ++v)
    for (std::size_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e)
      a(v, g.col_indices[e]) += g.values[e];
  return a;
}

/// Every non-zero entry of a square dense matrix becomes an edge.
inline CsrGraph from_dense(const Matrix& a) {
  if (a.rows() != a.cols()) throw InputError("from_dense: matrix not square");
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (a(i, j) != 0.0) edges.push_back({i, j, a(i, j)});
  return build_csr(std::move(edges), a.rows());
}

inline CsrGraph transpose(const CsrGraph& g) {
  std::vector<Edge> edges;
  edges.reserve(g.num_edges());
  for (std::size_t v = 0; v < g.num_nodes; ++v)
    for (std::size_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e)
      edges.push_back({g.col_indices[e], v, g.values[e]});
  return build_csr(std::move(edges), g.num_nodes);
}

/// D^{-1/2} A D^{-1/2} with D = diag(A 1). Nodes with zero degree get a zero
/// scale factor instead of a division.
inline CsrGraph normalize_symmetric(const CsrGraph& g) {
  std::vector<double> inv_sqrt(g.num_nodes, 0.0);
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    double deg = 0.0;
    for (std::size_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e)
      deg += g.values[e];
    if (deg > 0.0) inv_sqrt[v] = 1.0 / std::sqrt(deg);
  }
  CsrGraph out = g;
  for (std::size_t v = 0; v < g.num_nodes; ++v)
    for (std::size_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e)
      out.values[e] = inv_sqrt[v] * g.values[e] * inv_sqrt[g.col_indices[e]];
  return out;
}

/// Sparse x dense product: out[v] = sum over stored (v, u) of w * h[u].
inline FeatureMatrix spmm(const CsrGraph& g, const FeatureMatrix& h) {
  if (g.num_nodes != h.rows())
    throw InputError("spmm: graph has " + std::to_string(g.num_nodes) +
                     " nodes but features have " + std::to_string(h.rows()) +
                     " rows");
  const std::size_t d = h.cols();
  FeatureMatrix out(h.rows(), d);
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    double* dst = out.row(v).data();
    for (std::size_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e) {
      const double w = g.values[e];
      const double* src = h.row(g.col_indices[e]).data();
      for (std::size_t c = 0; c < d; ++c) dst[c] += w * src[c];
    }
  }
  return out;
}

/// forward[i] is the new position of node i.
struct Permutation {
  std::vector<std::size_t> forward;

  static Permutation identity(std::size_t n) {
    Permutation p;
    p.forward.resize(n);
    std::iota(p.forward.begin(), p.forward.end(), std::size_t{0});
    return p;
  }

  /// Uniform sample by Fisher-Yates.
  static Permutation random(std::size_t n, Rng& rng) {
    Permutation p = identity(n);
    for (std::size_t i = n; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(p.forward[i - 1], p.forward[pick(rng)]);
    }
    return p;
  }

  std::size_t size() const noexcept { return forward.size(); }

  bool is_valid() const {
    std::vector<char> seen(forward.size(), 0);
    for (std::size_t f : forward) {
      if (f >= forward.size() || seen[f]) return false;
      seen[f] = 1;
    }
    return true;
  }

  void validate(std::size_t n) const {
    if (forward.size() != n || !is_valid())
      throw InputError("Permutation: not a bijection on [0, " +
                       std::to_string(n) + ")");
  }

  Permutation inverse() const {
    Permutation inv;
    inv.forward.resize(forward.size());
    for (std::size_t i = 0; i < forward.size(); ++i) inv.forward[forward[i]] = i;
    return inv;
  }

  bool is_identity() const {
    for (std::size_t i = 0; i < forward.size(); ++i)
      if (forward[i] != i) return false;
    return true;
  }

  friend bool operator==(const Permutation&, const Permutation&) = default;
};

/// Rows of x moved to their new positions (P x).
inline Matrix permute_rows(const Matrix& x, const Permutation& p) {
  p.validate(x.rows());
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    std::copy(x.row(i).begin(), x.row(i).end(),
              out.row(p.forward[i]).begin());
  return out;
}

template <typename T>
std::vector<T> permute_values(std::span<const T> v, const Permutation& p) {
  p.validate(v.size());
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[p.forward[i]] = v[i];
  return out;
}

/// P A P^T, re-canonicalized.
inline CsrGraph permute_graph(const CsrGraph& g, const Permutation& p) {
  p.validate(g.num_nodes);
  std::vector<Edge> edges;
  edges.reserve(g.num_edges());
  for (std::size_t v = 0; v < g.num_nodes; ++v)
    for (std::size_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e)
      edges.push_back({p.forward[v], p.forward[g.col_indices[e]], g.values[e]});
  return build_csr(std::move(edges), g.num_nodes);
}

struct LabeledGraph {
  CsrGraph graph;
  FeatureMatrix features;
  std::vector<int> labels;
};

/// (P A P^T, P X, P Y). Labels may be empty.
inline LabeledGraph permute_graph(const CsrGraph& g, const FeatureMatrix& x,
                                  std::span<const int> labels,
                                  const Permutation& p) {
  if (x.rows() != g.num_nodes || (!labels.empty() && labels.size() != g.num_nodes))
    throw InputError("permute_graph: inconsistent sizes");
  LabeledGraph out;
  out.graph = permute_graph(g, p);
  out.features = permute_rows(x, p);
  if (!labels.empty()) out.labels = permute_values(labels, p);
  return out;
}

struct SyntheticGraphSpec {
  std::size_t num_nodes = 0;
  double sparsity = 0.0;
  std::size_t feature_dim = 0;
  std::uint64_t seed = 0;

  /// The 10/N rule used by the scaling study (capped at 1).
  static double auto_sparsity(std::size_t n) {
    return n == 0 ? 0.0 : std::min(1.0, 10.0 / static_cast<double>(n));
  }

  void validate() const {
    if (num_nodes == 0) throw InputError("graph spec: num_nodes must be > 0");
    if (!(sparsity >= 0.0 && sparsity <= 1.0))
      throw InputError("graph spec: sparsity must lie in [0, 1]");
  }
};

struct GeneratedGraph {
  CsrGraph graph;
  FeatureMatrix features;
};

/// Directed Erdos-Renyi graph over ordered pairs (u, v), u != v, with unit
/// weights. Geometric skipping gives O(N + M) expected time. Features are
/// standard normal.
inline GeneratedGraph gen_erdos_renyi(const SyntheticGraphSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, {0x45520000});
  const std::uint64_t n = spec.num_nodes;
  const std::uint64_t pairs = n * (n - 1);
  const double p = spec.sparsity;

  CsrGraph g;
  g.num_nodes = n;
  g.row_offsets.assign(n + 1, 0);
  if (p > 0.0 && pairs > 0) {
    g.col_indices.reserve(static_cast<std::size_t>(
        static_cast<double>(pairs) * p * 1.05 + 16));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double log_q = std::log1p(-p);
    std::uint64_t idx = 0;
    bool first = true;
    for (;;) {
      std::uint64_t skip = 0;
      if (p < 1.0) {
        const double r = 1.0 - unif(rng);  // (0, 1]
        const double s = std::floor(std::log(r) / log_q);
        if (s >= static_cast<double>(pairs)) break;
        skip = static_cast<std::uint64_t>(s);
      }
      const std::uint64_t next = first ? skip : idx + skip + 1;
      if (next >= pairs || next < idx) break;
      idx = next;
      first = false;
      const std::uint64_t u = idx / (n - 1);
      const std::uint64_t j = idx % (n - 1);
      const std::uint64_t v = j < u ? j : j + 1;
      g.col_indices.push_back(v);
      g.values.push_back(1.0);
      ++g.row_offsets[u + 1];
    }
  }
  std::partial_sum(g.row_offsets.begin(), g.row_offsets.end(),
                   g.row_offsets.begin());
  GeneratedGraph out{std::move(g), {}};
  out.features = random_normal(spec.num_nodes, spec.feature_dim, rng);
  return out;
}

struct SbmOptions {
  std::size_t feature_dim = 8;
  double offset = 1.0;  // added to column `label` of each node's features
  double noise = 1.0;
};

/// Undirected planted-partition graph. Node i belongs to block
/// i / nodes_per_block; features are Gaussian noise plus a block-indicator
/// offset.
inline LabeledGraph gen_sbm(std::size_t blocks, std::size_t nodes_per_block,
                            double p_in, double p_out, std::uint64_t seed,
                            const SbmOptions& opts = {}) {
  if (blocks == 0 || nodes_per_block == 0)
    throw InputError("gen_sbm: blocks and nodes_per_block must be > 0");
  if (!(0.0 <= p_out && p_out < p_in && p_in <= 1.0))
    throw InputError("gen_sbm: require 0 <= p_out < p_in <= 1");
  Rng rng = make_rng(seed, {0x53424d00});
  const std::size_t n = blocks * nodes_per_block;
  std::bernoulli_distribution in_edge(p_in), out_edge(p_out);
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v) {
      const bool same = u / nodes_per_block == v / nodes_per_block;
      if (same ? in_edge(rng) : out_edge(rng)) {
        edges.push_back({u, v, 1.0});
        edges.push_back({v, u, 1.0});
      }
    }
  LabeledGraph out;
  out.graph = build_csr(std::move(edges), n);
  out.labels.resize(n);
  out.features = random_normal(n, opts.feature_dim, rng, opts.noise);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i / nodes_per_block);
    out.labels[i] = label;
    if (static_cast<std::size_t>(label) < opts.feature_dim)
      out.features(i, label) += opts.offset;
  }
  return out;
}

}  // namespace geco

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

#include "geco/graph.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "geco/io.hpp"
#include "oracles.hpp"

namespace geco {
namespace {

TEST(BuildCsr, SingleUndirectedEdge) {
  const CsrGraph g = build_csr({{0, 1, 1.0}, {1, 0, 1.0}}, 2);
  EXPECT_EQ(g.row_offsets, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(g.col_indices, (std::vector<std::size_t>{1, 0}));
  g.validate();
}

TEST(BuildCsr, EmptyGraph) {
  const CsrGraph g = build_csr({}, 3);
  EXPECT_EQ(g.row_offsets, (std::vector<std::size_t>{0, 0, 0, 0}));
  EXPECT_TRUE(g.col_indices.empty());
}

TEST(BuildCsr, OutOfRangeEndpointRejected) {
  EXPECT_THROW(build_csr({{0, 3, 1.0}}, 3), InputError);
  EXPECT_THROW(build_csr({{5, 0, 1.0}}, 3), InputError);
}

TEST(BuildCsr, DuplicatesMergedBySumming) {
  const CsrGraph g = build_csr({{0, 1, 1.5}, {0, 1, 2.0}, {1, 1, 1.0}}, 2);
  ASSERT_EQ(g.num_edges(), 2u);
  EXPECT_DOUBLE_EQ(g.values[0], 3.5);
}

TEST(BuildCsr, MatchesDenseOracleOnRandomEdgeList) {
  std::mt19937_64 rng(7);
  const auto edges = oracle::random_edges(20, 100, rng);
  const CsrGraph g = build_csr(edges, 20);
  g.validate();
  EXPECT_LT(max_abs_diff(to_dense(g), oracle::dense_from_edges(edges, 20)), 1e-12);
}

TEST(BuildCsr, DenseRoundTripIsIdentity) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    const CsrGraph g = build_csr(oracle::random_edges(n, 3 * n, rng), n);
    EXPECT_EQ(from_dense(to_dense(g)), g);
  }
}

TEST(NormalizeSymmetric, UnitDegreesUnchanged) {
  const CsrGraph g = build_csr({{0, 1, 1.0}, {1, 0, 1.0}}, 2);
  EXPECT_EQ(normalize_symmetric(g).values, g.values);
}

TEST(NormalizeSymmetric, StarGraph) {
  std::vector<Edge> edges;
  for (std::size_t leaf = 1; leaf <= 4; ++leaf) {
    edges.push_back({0, leaf, 1.0});
    edges.push_back({leaf, 0, 1.0});
  }
  const CsrGraph a = normalize_symmetric(build_csr(edges, 5));
  for (double w : a.values) EXPECT_DOUBLE_EQ(w, 0.5);
}

TEST(NormalizeSymmetric, ZeroDegreeRowsStayZero) {
  const CsrGraph a = normalize_symmetric(build_csr({{0, 1, 1.0}}, 3));
  // Node 1 has no out-edges, so the (0, 1) entry is scaled by zero.
  ASSERT_EQ(a.num_edges(), 1u);
  EXPECT_EQ(a.values[0], 0.0);
  EXPECT_TRUE(all_finite(a.values));
}

TEST(NormalizeSymmetric, MatchesDenseOracle) {
  std::mt19937_64 rng(3);
  const auto edges = oracle::random_edges(64, 400, rng);
  const CsrGraph g = build_csr(edges, 64);
  const Matrix want = oracle::dense_sym_normalize(oracle::dense_from_edges(edges, 64));
  EXPECT_LT(max_abs_diff(to_dense(normalize_symmetric(g)), want), 1e-14);
}

TEST(NormalizeSymmetric, PreservesSymmetry) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const CsrGraph g = build_csr(oracle::random_symmetric_edges(50, 0.1, rng), 50);
    const Matrix a = to_dense(normalize_symmetric(g));
    EXPECT_LT(max_abs_diff(a, oracle::naive_transpose(a)), 1e-14);
  }
}

TEST(Spmm, IdentityAdjacency) {
  std::vector<Edge> eye;
  for (std::size_t i = 0; i < 5; ++i) eye.push_back({i, i, 1.0});
  Rng rng = make_rng(1);
  const Matrix h = random_normal(5, 3, rng);
  EXPECT_EQ(spmm(build_csr(eye, 5), h), h);
}

TEST(Spmm, SwapRows) {
  const CsrGraph a = build_csr({{0, 1, 1.0}, {1, 0, 1.0}}, 2);
  const Matrix h = Matrix::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(spmm(a, h), Matrix::from_rows({{3, 4}, {1, 2}}));
}

TEST(Spmm, DimensionMismatch) {
  EXPECT_THROW(spmm(build_csr({}, 3), Matrix(4, 2)), InputError);
}

TEST(Spmm, MatchesDenseMatmulProperty) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + rng() % 256;
    const std::size_t d = 1 + rng() % 8;
    const auto edges = oracle::random_edges(n, 1 + rng() % (4 * n), rng);
    Rng frng = make_rng(trial);
    const Matrix h = random_normal(n, d, frng);
    const Matrix want = oracle::naive_matmul(oracle::dense_from_edges(edges, n), h);
    const Matrix got = spmm(build_csr(edges, n), h);
    EXPECT_LE(max_abs_diff(got, want), 1e-12 * (max_abs(want.values()) + 1.0)) << "n=" << n;
  }
}

TEST(Permutation, RandomIsBijectionAndInverseComposes) {
  Rng rng = make_rng(9);
  const Permutation p = Permutation::random(50, rng);
  EXPECT_TRUE(p.is_valid());
  const Permutation inv = p.inverse();
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(inv.forward[p.forward[i]], i);
}

TEST(PermuteGraph, IdentityLeavesInputsUnchanged) {
  std::mt19937_64 rng(2);
  const CsrGraph g = build_csr(oracle::random_edges(30, 90, rng), 30);
  Rng frng = make_rng(2);
  const Matrix x = random_normal(30, 4, frng);
  std::vector<int> y(30);
  for (int i = 0; i < 30; ++i) y[i] = i % 3;
  const auto out = permute_graph(g, x, y, Permutation::identity(30));
  EXPECT_EQ(out.graph, g);
  EXPECT_EQ(out.features, x);
  EXPECT_EQ(out.labels, y);
}

TEST(PermuteGraph, InverseRoundTrip) {
  std::mt19937_64 rng(4);
  Rng prng = make_rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const CsrGraph g = build_csr(oracle::random_edges(40, 150, rng), 40);
    const Matrix x = random_normal(40, 3, prng);
    std::vector<int> y(40);
    for (int i = 0; i < 40; ++i) y[i] = static_cast<int>(prng() % 5);
    const Permutation p = Permutation::random(40, prng);
    const auto fwd = permute_graph(g, x, y, p);
    const auto back = permute_graph(fwd.graph, fwd.features, fwd.labels, p.inverse());
    EXPECT_EQ(back.graph, g);
    EXPECT_EQ(back.features, x);
    EXPECT_EQ(back.labels, y);
  }
}

TEST(PermuteGraph, MatchesDensePAPt) {
  std::mt19937_64 rng(8);
  Rng prng = make_rng(8);
  const auto edges = oracle::random_edges(32, 120, rng);
  const Permutation p = Permutation::random(32, prng);
  const Matrix pm = oracle::permutation_matrix(p.forward);
  const Matrix want = oracle::naive_matmul(
      oracle::naive_matmul(pm, oracle::dense_from_edges(edges, 32)), oracle::naive_transpose(pm));
  const CsrGraph got = permute_graph(build_csr(edges, 32), p);
  got.validate();
  EXPECT_LT(max_abs_diff(to_dense(got), want), 1e-15);
  const Matrix x = random_normal(32, 2, prng);
  EXPECT_LT(max_abs_diff(permute_rows(x, p), oracle::naive_matmul(pm, x)), 1e-15);
}

TEST(PermuteGraph, InvalidPermutationRejected) {
  const CsrGraph g = build_csr({}, 3);
  Permutation bad{{0, 0, 1}};
  EXPECT_THROW(permute_graph(g, bad), InputError);
  EXPECT_THROW(permute_graph(g, Permutation::identity(4)), InputError);
}

TEST(ErdosRenyi, EdgeCountConcentrates) {
  const std::size_t n = 1024;
  const double p = 10.0 / n;
  const auto out = gen_erdos_renyi({n, p, 4, 123});
  out.graph.validate();
  const double trials = static_cast<double>(n) * (n - 1);
  const double mean = trials * p;
  const double sigma = std::sqrt(trials * p * (1 - p));
  EXPECT_LT(std::abs(static_cast<double>(out.graph.num_edges()) - mean), 5 * sigma);
  // Also within 5 sigma of N^2 p.
  EXPECT_LT(std::abs(static_cast<double>(out.graph.num_edges()) - n * n * p), 5 * sigma);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t e = out.graph.row_offsets[v]; e < out.graph.row_offsets[v + 1]; ++e)
      EXPECT_NE(out.graph.col_indices[e], v);
}

TEST(ErdosRenyi, ZeroSparsityIsEmpty) {
  const auto out = gen_erdos_renyi({100, 0.0, 2, 1});
  EXPECT_EQ(out.graph.num_edges(), 0u);
  EXPECT_EQ(out.features.rows(), 100u);
}

TEST(ErdosRenyi, FullSparsityIsComplete) {
  const auto out = gen_erdos_renyi({12, 1.0, 1, 1});
  EXPECT_EQ(out.graph.num_edges(), 12u * 11u);
  out.graph.validate();
}

TEST(ErdosRenyi, DeterministicGivenSeed) {
  const auto a = gen_erdos_renyi({500, 0.02, 3, 77});
  const auto b = gen_erdos_renyi({500, 0.02, 3, 77});
  const auto c = gen_erdos_renyi({500, 0.02, 3, 78});
  EXPECT_EQ(a.graph, b.graph);
  EXPECT_EQ(a.features, b.features);
  EXPECT_NE(a.graph, c.graph);
}

TEST(ErdosRenyi, InvalidSpecRejected) {
  EXPECT_THROW(gen_erdos_renyi({0, 0.1, 1, 1}), InputError);
  EXPECT_THROW(gen_erdos_renyi({10, 1.5, 1, 1}), InputError);
}

TEST(Sbm, DisjointCliques) {
  const auto out = gen_sbm(2, 4, 1.0, 0.0, 5);
  const Matrix a = to_dense(out.graph);
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t v = 0; v < 8; ++v) {
      const bool same = u / 4 == v / 4;
      EXPECT_EQ(a(u, v), (same && u != v) ? 1.0 : 0.0) << u << "," << v;
    }
  EXPECT_EQ(out.labels.size(), 8u);
}

TEST(Sbm, LabelsAndFeatures) {
  const auto out = gen_sbm(3, 7, 0.5, 0.1, 9);
  EXPECT_EQ(out.labels.size(), 21u);
  EXPECT_EQ(out.features.rows(), 21u);
  EXPECT_EQ(out.labels[0], 0);
  EXPECT_EQ(out.labels[20], 2);
}

TEST(Sbm, IntraBlockDensityConcentrates) {
  const double p_in = 0.1;
  const auto out = gen_sbm(2, 100, p_in, 0.01, 21);
  const Matrix a = to_dense(out.graph);
  double intra = 0;
  double pairs = 0;
  for (std::size_t u = 0; u < 200; ++u)
    for (std::size_t v = u + 1; v < 200; ++v)
      if (u / 100 == v / 100) {
        intra += a(u, v);
        pairs += 1;
      }
  const double sigma = std::sqrt(pairs * p_in * (1 - p_in));
  EXPECT_LT(std::abs(intra - pairs * p_in), 5 * sigma);
}

TEST(Sbm, InvalidProbabilitiesRejected) {
  EXPECT_THROW(gen_sbm(2, 4, 0.1, 0.2, 1), InputError);
  EXPECT_THROW(gen_sbm(2, 4, 1.2, 0.2, 1), InputError);
}

TEST(GraphText, RoundTripAndDefaultWeight) {
  std::istringstream in("3 3\n0 1\n1 2 2.5\n2 0\n");
  const CsrGraph g = read_graph_text(in);
  EXPECT_EQ(g.num_edges(), 3u);
  EXPECT_DOUBLE_EQ(to_dense(g)(1, 2), 2.5);
  EXPECT_DOUBLE_EQ(to_dense(g)(0, 1), 1.0);
  std::ostringstream out;
  write_graph_text(out, g);
  std::istringstream again(out.str());
  EXPECT_EQ(read_graph_text(again), g);
}

TEST(GraphText, MalformedInput) {
  std::istringstream missing("3 2\n0 1\n");
  EXPECT_THROW(read_graph_text(missing), InputError);
  std::istringstream range("2 1\n0 5\n");
  EXPECT_THROW(read_graph_text(range), InputError);
}

TEST(FeatureBinary, LayoutIsLittleEndianHeaderPlusRows) {
  const Matrix x = Matrix::from_rows({{1.0, -2.0}, {0.5, 3.0}, {4.0, 5.0}});
  std::ostringstream out(std::ios::binary);
  write_features(out, x);
  const std::string bytes = out.str();
  ASSERT_EQ(bytes.size(), 16u + 6u * 8u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 3u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);
  double second = 0;
  std::memcpy(&second, bytes.data() + 16 + 8, 8);
  EXPECT_EQ(second, -2.0);
  std::istringstream in(bytes, std::ios::binary);
  EXPECT_EQ(read_features(in), x);
}

TEST(FeatureBinary, TruncatedStreamFails) {
  std::istringstream in(std::string("\x02\0\0\0\0\0\0\0\x01\0\0\0\0\0\0\0", 16), std::ios::binary);
  EXPECT_THROW(read_features(in), IoError);
}

}  // namespace
}  // namespace geco

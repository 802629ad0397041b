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

#include "geco/autograd.hpp"

#include <gtest/gtest.h>

#include <cstring>

#include "geco/ops.hpp"
#include "oracles.hpp"

namespace geco {
namespace {

// Every coordinate of small parameters, central differences at 1e-5.
GradcheckReport check_all(std::vector<Matrix*> params, const RecordedFn& f, double tol) {
  GradcheckOptions opts;
  opts.tol = tol;
  opts.min_coords = 100000;
  return gradcheck(params, f, opts);
}

// Random fixed weights so that a downstream reduction sees a non-trivial
// adjoint instead of a constant.
NodeId weighted_sum(Tape& t, NodeId x, std::uint64_t seed) {
  const Matrix& v = t.value(x);
  Rng rng = make_rng(seed, {77});
  return t.sum(t.mul(x, t.input(random_normal(v.rows(), v.cols(), rng))));
}

TEST(Tape, IdentityAffineHasUnitGradient) {
  Tape t;
  Rng rng = make_rng(1);
  const Matrix x = random_normal(4, 3, rng);
  Matrix eye(3, 3);
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
  const NodeId xn = t.parameter(x);
  const NodeId y = t.affine(xn, t.input(eye));
  EXPECT_EQ(t.value(y), x);
  const Grad g = t.backward(t.sum(y));
  EXPECT_EQ(g.of(x), Matrix(4, 3, 1.0));
}

TEST(Tape, ProductRule) {
  Tape t;
  Rng rng = make_rng(2);
  const Matrix u = random_normal(5, 2, rng), v = random_normal(5, 2, rng);
  const NodeId un = t.parameter(u), vn = t.parameter(v);
  const Grad g = t.backward(t.sum(t.mul(un, vn)));
  EXPECT_EQ(g.of(u), v);
  EXPECT_EQ(g.of(v), u);
}

TEST(Tape, HalfSquaredNormGivesInput) {
  Tape t;
  Rng rng = make_rng(3);
  const Matrix x = random_normal(6, 4, rng);
  const NodeId xn = t.parameter(x);
  const Grad g = t.backward(t.scale(t.sum(t.mul(xn, xn)), 0.5));
  EXPECT_EQ(g.of(x), x);
}

TEST(Tape, ConstantLossGivesZeroGradient) {
  Tape t;
  Rng rng = make_rng(4);
  const Matrix x = random_normal(3, 3, rng);
  const NodeId xn = t.parameter(x);
  const Grad g = t.backward(t.scale(t.sum(xn), 0.0));
  EXPECT_EQ(max_abs(g.of(x).values()), 0.0);
  // A parameter that never reaches the loss also reports zeros.
  const Matrix unused(2, 2, 1.0);
  EXPECT_EQ(g.of(unused), Matrix(2, 2));
}

TEST(Tape, SharedParameterAccumulates) {
  Tape t;
  const Matrix x(2, 2, 3.0);
  const NodeId a = t.parameter(x), b = t.parameter(x);
  const Grad g = t.backward(t.sum(t.add(a, t.scale(b, 2.0))));
  EXPECT_EQ(g.of(x), Matrix(2, 2, 3.0));
}

TEST(Tape, NonScalarLossRejected) {
  Tape t;
  const NodeId x = t.parameter(Matrix(2, 2, 1.0));
  EXPECT_THROW(t.backward(x), ContractError);
}

TEST(Tape, UnsupportedGenericKindRejected) {
  Tape t;
  const NodeId x = t.input(Matrix(2, 2, 1.0));
  const std::vector<NodeId> in{x};
  EXPECT_THROW(t.record(OpKind::kSpmm, in), ContractError);
  EXPECT_THROW(t.record(OpKind::kSoftmaxCrossEntropy, in), ContractError);
  EXPECT_THROW(t.record(OpKind::kAdd, in), ContractError);
  EXPECT_THROW(t.value(99), ContractError);
}

TEST(Tape, GenericRecordMatchesNamedOps) {
  Tape t;
  Rng rng = make_rng(5);
  const NodeId a = t.input(random_normal(3, 3, rng)), b = t.input(random_normal(3, 3, rng));
  const std::vector<NodeId> ab{a, b};
  EXPECT_EQ(t.value(t.record(OpKind::kMul, ab)), t.value(t.mul(a, b)));
  EXPECT_EQ(t.value(t.record(OpKind::kConv, ab)), t.value(t.conv(a, b)));
  EXPECT_EQ(t.value(t.record(OpKind::kAffine, ab)), t.value(t.affine(a, b)));
}

// --- Finite-difference checks of each op kind --------------------------------

TEST(OpGradients, Affine) {
  Rng rng = make_rng(10);
  Matrix x = random_normal(5, 4, rng), w = random_normal(4, 3, rng), b = random_normal(1, 3, rng);
  auto f = [&](Tape& t) {
    return weighted_sum(t, t.affine(t.parameter(x), t.parameter(w), t.parameter(b)), 1);
  };
  EXPECT_LT(check_all({&x, &w, &b}, f, 1e-5).max_rel_error, 1e-5);
}

TEST(OpGradients, SpmmMatchesDenseTransposeOracle) {
  std::mt19937_64 erng(11);
  const auto edges = oracle::random_edges(9, 25, erng);
  auto g = std::make_shared<const CsrGraph>(build_csr(edges, 9));
  Rng rng = make_rng(11);
  Matrix h = random_normal(9, 3, rng);
  const Matrix upstream = random_normal(9, 3, rng);
  Tape t;
  const NodeId hn = t.parameter(h);
  const NodeId y = t.spmm(g, hn);
  const Grad grad = t.backward(t.sum(t.mul(y, t.input(upstream))));
  const Matrix want =
      oracle::naive_matmul(oracle::naive_transpose(oracle::dense_from_edges(edges, 9)), upstream);
  EXPECT_LT(max_abs_diff(grad.of(h), want), 1e-13);

  auto f = [&](Tape& tt) { return weighted_sum(tt, tt.spmm(g, tt.parameter(h)), 2); };
  EXPECT_LT(check_all({&h}, f, 1e-5).max_rel_error, 1e-5);
}

TEST(OpGradients, ConcatAndSlice) {
  Rng rng = make_rng(12);
  Matrix a = random_normal(4, 2, rng), b = random_normal(4, 3, rng);
  auto f = [&](Tape& t) {
    const NodeId c = t.concat(t.parameter(a), t.parameter(b));
    return weighted_sum(t, t.mul(c, t.concat(t.slice(c, 3, 2), t.slice(c, 0, 3))), 3);
  };
  EXPECT_LT(check_all({&a, &b}, f, 1e-5).max_rel_error, 1e-5);

  Tape t;
  const NodeId an = t.parameter(a), bn = t.parameter(b);
  const Grad g = t.backward(t.sum(t.concat(an, bn)));
  EXPECT_EQ(g.of(a), Matrix(4, 2, 1.0));
  EXPECT_EQ(g.of(b), Matrix(4, 3, 1.0));
}

TEST(OpGradients, ElementwiseAddScale) {
  Rng rng = make_rng(13);
  Matrix u = random_normal(3, 4, rng), v = random_normal(3, 4, rng);
  auto f = [&](Tape& t) {
    const NodeId un = t.parameter(u), vn = t.parameter(v);
    return weighted_sum(t, t.add(t.mul(un, vn), t.scale(un, -1.5)), 4);
  };
  EXPECT_LT(check_all({&u, &v}, f, 1e-5).max_rel_error, 1e-5);
}

TEST(OpGradients, CircularConvolution) {
  for (std::size_t n : {1u, 5u, 8u, 13u}) {
    Rng rng = make_rng(14, {n});
    Matrix u = random_normal(n, 3, rng), z = random_normal(n, 3, rng);
    auto f = [&](Tape& t) { return weighted_sum(t, t.conv(t.parameter(u), t.parameter(z)), 5); };
    EXPECT_LT(check_all({&u, &z}, f, 1e-5).max_rel_error, 1e-5) << "n=" << n;
  }
}

TEST(OpGradients, ConvAdjointIsCorrelation) {
  Rng rng = make_rng(15);
  const std::size_t n = 11;
  Matrix u = random_normal(n, 2, rng), z = random_normal(n, 2, rng);
  const Matrix gy = random_normal(n, 2, rng);
  Tape t;
  const NodeId un = t.parameter(u), zn = t.parameter(z);
  const Grad g = t.backward(t.sum(t.mul(t.conv(un, zn), t.input(gy))));
  // dL/du_i = sum_t gy_t z_{t-i}, summed by hand with explicit wraparound.
  Matrix du(n, 2), dz(n, 2);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < n; ++s) {
        du(i, c) += gy(s, c) * z((s + n - i) % n, c);
        dz(i, c) += gy(s, c) * u((s + n - i) % n, c);
      }
  EXPECT_LT(max_abs_diff(g.of(u), du), 1e-12);
  EXPECT_LT(max_abs_diff(g.of(z), dz), 1e-12);
}

TEST(OpGradients, LayerNorm) {
  Rng rng = make_rng(16);
  Matrix x = random_normal(5, 6, rng), gamma = random_normal(1, 6, rng), beta = random_normal(1, 6, rng);
  auto f = [&](Tape& t) {
    return weighted_sum(t, t.layer_norm(t.parameter(x), t.parameter(gamma), t.parameter(beta)), 6);
  };
  EXPECT_LT(check_all({&x, &gamma, &beta}, f, 1e-5).max_rel_error, 1e-5);
}

TEST(OpGradients, BatchNormTrainingStatistics) {
  Rng rng = make_rng(17);
  Matrix x = random_normal(7, 4, rng), gamma = random_normal(1, 4, rng), beta = random_normal(1, 4, rng);
  auto f = [&](Tape& t) {
    return weighted_sum(t, t.batch_norm(t.parameter(x), t.parameter(gamma), t.parameter(beta)), 7);
  };
  EXPECT_LT(check_all({&x, &gamma, &beta}, f, 1e-5).max_rel_error, 1e-5);
}

TEST(OpGradients, BatchNormFixedStatistics) {
  Rng rng = make_rng(18);
  Matrix x = random_normal(7, 4, rng), gamma = random_normal(1, 4, rng), beta = random_normal(1, 4, rng);
  const ColumnStats fixed{{0.1, -0.2, 0.3, 0.0}, {1.5, 0.5, 2.0, 1.0}};
  auto f = [&](Tape& t) {
    return weighted_sum(
        t, t.batch_norm(t.parameter(x), t.parameter(gamma), t.parameter(beta), fixed), 8);
  };
  EXPECT_LT(check_all({&x, &gamma, &beta}, f, 1e-5).max_rel_error, 1e-5);
}

TEST(OpGradients, Activations) {
  for (Activation act : {Activation::kRelu, Activation::kGelu, Activation::kSine}) {
    Rng rng = make_rng(19);
    Matrix x = random_normal(6, 5, rng);
    // Keep relu inputs away from the kink where central differences straddle it.
    for (double& v : x.values())
      if (std::abs(v) < 1e-3) v = 0.5;
    auto f = [&](Tape& t) { return weighted_sum(t, t.activation(act, t.parameter(x)), 9); };
    EXPECT_LT(check_all({&x}, f, 1e-5).max_rel_error, 1e-5) << static_cast<int>(act);
  }
}

TEST(OpGradients, SoftmaxCrossEntropyOverMaskedRows) {
  Rng rng = make_rng(20);
  Matrix z = random_normal(6, 3, rng);
  const std::vector<int> labels{0, 2, 1, 1, 0, 2};
  const std::vector<std::size_t> rows{0, 2, 3, 5};
  auto f = [&](Tape& t) { return t.softmax_cross_entropy(t.parameter(z), labels, rows); };
  EXPECT_LT(check_all({&z}, f, 1e-5).max_rel_error, 1e-5);

  Tape t;
  const NodeId zn = t.parameter(z);
  const Grad g = t.backward(t.softmax_cross_entropy(zn, labels, rows));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(g.of(z)(1, c), 0.0);  // masked-out rows get no gradient
    EXPECT_EQ(g.of(z)(4, c), 0.0);
  }
  EXPECT_THROW(t.softmax_cross_entropy(zn, {0, 1}, rows), InputError);
  EXPECT_THROW(t.softmax_cross_entropy(zn, labels, {}), InputError);
  EXPECT_THROW(t.softmax_cross_entropy(zn, {0, 3, 0, 0, 0, 0}, {1}), InputError);
}

TEST(OpGradients, MeanAndPermuteRows) {
  Rng rng = make_rng(21);
  Matrix x = random_normal(5, 2, rng);
  const std::vector<std::size_t> src{3, 0, 4, 1, 2};
  auto f = [&](Tape& t) {
    const NodeId p = t.permute_rows(t.parameter(x), src);
    return t.mean(t.mul(p, t.input(Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}}))));
  };
  EXPECT_LT(check_all({&x}, f, 1e-5).max_rel_error, 1e-5);
  Tape t;
  EXPECT_THROW(t.permute_rows(t.input(x), {0, 1}), InputError);
  EXPECT_THROW(t.permute_rows(t.input(x), {0, 1, 2, 3, 9}), InputError);
}

// Global context block recorded from primitive tape ops.
struct TapedGcb {
  Matrix x, w, b, w1, b1, w2, b2;
  std::size_t order, d, pos_dim;

  NodeId record(Tape& t) const {
    const std::size_t n = x.rows();
    const NodeId z = t.affine(t.input(x), t.parameter(w), t.parameter(b));
    const NodeId pe = t.input(positional_embedding(n, pos_dim));
    const NodeId hid = t.activation(Activation::kSine, t.affine(pe, t.parameter(w1), t.parameter(b1)));
    const NodeId taps = t.affine(hid, t.parameter(w2), t.parameter(b2));
    NodeId v = t.slice(z, order * d, d);
    for (std::size_t k = 0; k < order; ++k)
      v = t.mul(t.slice(z, k * d, d), t.conv(v, t.slice(taps, k * d, d)));
    return v;
  }
};

TEST(OpGradients, GcbFilterWeightsAtN16) {
  Rng rng = make_rng(22);
  const std::size_t n = 16, d = 3, k = 2;
  GcbParams p = init_gcb_params(4, d, k, n, rng, 8, 12);
  p.proj.b = random_normal(1, p.proj.b.cols(), rng, 0.3);
  p.filters.b1 = random_normal(1, 12, rng, 0.3);
  TapedGcb g{random_normal(n, 4, rng), p.proj.w, p.proj.b, p.filters.w1, p.filters.b1,
             p.filters.w2, p.filters.b2, k, d, 8};
  {
    Tape t;
    EXPECT_LT(max_abs_diff(t.value(g.record(t)), gcb_forward(g.x, p)), 1e-13);
  }
  auto f = [&](Tape& t) { return t.sum(g.record(t)); };
  const auto report = check_all({&g.w1, &g.b1, &g.w2, &g.b2}, f, 1e-5);
  EXPECT_GE(report.coords.size(), 64u);
  EXPECT_LT(report.max_rel_error, 1e-5);
  const auto proj = check_all({&g.w, &g.b}, f, 1e-5);
  EXPECT_LT(proj.max_rel_error, 1e-5);
}

TEST(OpGradients, NormalizationComposition) {
  Rng rng = make_rng(23);
  std::mt19937_64 erng(23);
  const std::size_t n = 10;
  auto a = std::make_shared<const CsrGraph>(
      normalize_symmetric(build_csr(oracle::random_symmetric_edges(n, 0.3, erng), n)));
  Matrix x = random_normal(n, 3, rng), w = random_normal(6, 3, rng);
  Matrix bg = random_normal(1, 6, rng), bb = random_normal(1, 6, rng);
  Matrix lg = random_normal(1, 3, rng), lb = random_normal(1, 3, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  auto f = [&](Tape& t) {
    const NodeId xn = t.parameter(x);
    const NodeId h = t.concat(xn, t.spmm(a, xn));
    const NodeId bn = t.batch_norm(h, t.parameter(bg), t.parameter(bb));
    const NodeId y = t.activation(Activation::kGelu, t.affine(bn, t.parameter(w)));
    const NodeId ln = t.layer_norm(t.add(y, xn), t.parameter(lg), t.parameter(lb));
    return t.softmax_cross_entropy(ln, labels, rows);
  };
  EXPECT_LT(check_all({&x, &w, &bg, &bb, &lg, &lb}, f, 1e-4).max_rel_error, 1e-4);
}

TEST(Tape, ReplayIsBitwiseDeterministic) {
  Rng rng = make_rng(24);
  const std::size_t n = 32, d = 4;
  GcbParams p = init_gcb_params(5, d, 2, n, rng, 8, 12);
  TapedGcb g{random_normal(n, 5, rng), p.proj.w, p.proj.b, p.filters.w1, p.filters.b1,
             p.filters.w2, p.filters.b2, 2, d, 8};
  auto run = [&] {
    Tape t;
    const Grad gr = t.backward(t.mean(t.activation(Activation::kGelu, g.record(t))));
    return gr.of(g.w1);
  };
  const Matrix a = run(), b = run();
  ASSERT_TRUE(a.same_shape(b));
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
}

// --- gradcheck itself --------------------------------------------------------

TEST(Gradcheck, LinearFunctionMachinePrecision) {
  Rng rng = make_rng(30);
  Matrix w = random_normal(10, 10, rng);
  const Matrix c = random_normal(10, 10, rng);
  auto f = [&](Tape& t) { return t.sum(t.mul(t.parameter(w), t.input(c))); };
  const auto report = gradcheck(std::vector<Matrix*>{&w}, f);
  EXPECT_EQ(report.coords.size(), 64u);
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_rel_error, 1e-7);
}

TEST(Gradcheck, SignFlippedAdjointFails) {
  Rng rng = make_rng(31);
  Matrix w = random_normal(9, 9, rng);
  auto f = [&](Tape& t) {
    const NodeId p = t.parameter(w);
    return t.sum(t.activation(Activation::kSine, t.mul(p, p)));
  };
  Tape t;
  const NodeId loss = f(t);
  Matrix g = t.backward(loss).of(w);
  EXPECT_TRUE(gradcheck(std::vector<Matrix*>{&w}, f, std::vector<Matrix>{g}).passed);
  for (double& v : g.values()) v = -v;
  const auto bad = gradcheck(std::vector<Matrix*>{&w}, f, std::vector<Matrix>{g});
  EXPECT_FALSE(bad.passed);
  EXPECT_GT(bad.max_rel_error, 1.0);
}

TEST(Gradcheck, RestoresParameters) {
  Rng rng = make_rng(32);
  Matrix w = random_normal(4, 4, rng);
  const Matrix before = w;
  auto f = [&](Tape& t) { return t.mean(t.activation(Activation::kGelu, t.parameter(w))); };
  gradcheck(std::vector<Matrix*>{&w}, f);
  EXPECT_EQ(w, before);
}

TEST(Gradcheck, NonFiniteReportsCoordinate) {
  Matrix w(2, 2, 1.0);
  auto f = [&](Tape& t) { return t.sum(t.parameter(w)); };
  Matrix g(2, 2, 1.0);
  g(1, 0) = std::numeric_limits<double>::quiet_NaN();
  GradcheckOptions opts;
  opts.min_coords = 4;
  try {
    gradcheck(std::vector<Matrix*>{&w}, f, std::vector<Matrix>{g}, opts);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 2"), std::string::npos) << e.what();
  }
  // An overflowing loss is caught the same way.
  w(0, 0) = 1e308;
  auto sq = [&](Tape& t) {
    const NodeId p = t.parameter(w);
    return t.sum(t.mul(p, p));
  };
  EXPECT_THROW(gradcheck(std::vector<Matrix*>{&w}, sq, opts), NumericError);
}

TEST(Gradcheck, RejectsBadStep) {
  Matrix w(1, 1, 1.0);
  auto f = [&](Tape& t) { return t.sum(t.parameter(w)); };
  GradcheckOptions opts;
  opts.step = 0.0;
  EXPECT_THROW(gradcheck(std::vector<Matrix*>{&w}, f, opts), InputError);
  opts.step = -1.0;
  EXPECT_THROW(gradcheck(std::vector<Matrix*>{&w}, f, opts), InputError);
}

TEST(Gradcheck, LargeStepIsCaughtOnCurvedFunction) {
  Rng rng = make_rng(33);
  Matrix w = random_normal(8, 8, rng);
  auto f = [&](Tape& t) { return t.sum(t.activation(Activation::kSine, t.parameter(w))); };
  GradcheckOptions opts;
  opts.step = 1.0;
  EXPECT_FALSE(gradcheck(std::vector<Matrix*>{&w}, f, opts).passed);
}

}  // namespace
}  // namespace geco

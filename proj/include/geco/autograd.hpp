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

// Reverse-mode differentiation over the small, fixed vocabulary of operations
// the model uses. A Tape is append-only: each recorded op computes its value
// eagerly and keeps whatever it needs for the adjoint.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "geco/core.hpp"
#include "geco/graph.hpp"
#include "geco/kernels.hpp"
#include "geco/random.hpp"
#include "geco/spectral.hpp"

namespace geco {

enum class OpKind {
  kInput,
  kParameter,
  kAffine,
  kSpmm,
  kConcat,
  kSlice,
  kMul,
  kAdd,
  kScale,
  kConv,
  kLayerNorm,
  kBatchNorm,
  kActivation,
  kSoftmaxCrossEntropy,
  kMean,
  kSum,
  kPermuteRows,
};

using NodeId = std::size_t;

/// Gradients from one backward pass: an adjoint per tape node, and the
/// accumulated gradient of every registered parameter.
struct Grad {
  std::vector<Matrix> adjoints;
  std::map<const Matrix*, Matrix> params;

  const Matrix& wrt(NodeId id) const { return adjoints.at(id); }

  /// Zero-shaped gradient for parameters the loss does not reach.
  Matrix of(const Matrix& p) const {
    auto it = params.find(&p);
    return it == params.end() ? Matrix(p.rows(), p.cols()) : it->second;
  }
};

class Tape {
 public:
  explicit Tape(ExecPolicy policy = {}) : policy_(policy) {}

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(NodeId id) const { return at(id).kind; }
  const Matrix& value(NodeId id) const { return at(id).value; }

  /// Constant leaf; no gradient flows into it.
  NodeId input(Matrix value) {
    Node n;
    n.kind = OpKind::kInput;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// Trainable leaf bound to `p`; its gradient is reported under &p.
  NodeId parameter(const Matrix& p) {
    Node n;
    n.kind = OpKind::kParameter;
    n.value = p;
    n.param = &p;
    n.requires_grad = true;
    return push(std::move(n));
  }

  /// x w (+ b). Pass no bias for a plain linear map.
  NodeId affine(NodeId x, NodeId w, std::optional<NodeId> b = std::nullopt) {
    Node n = make(OpKind::kAffine, {x, w});
    if (b) add_input(n, *b);
    n.value = ::geco::affine(value(x), value(w), b ? value(*b) : Matrix{});
    return push(std::move(n));
  }

  /// A x with a constant sparse A.
  NodeId spmm(std::shared_ptr<const CsrGraph> graph, NodeId x) {
    Node n = make(OpKind::kSpmm, {x});
    n.value = ::geco::spmm(*graph, value(x));
    n.graph = std::move(graph);
    return push(std::move(n));
  }

  NodeId concat(NodeId a, NodeId b) {
    Node n = make(OpKind::kConcat, {a, b});
    n.value = concat_cols(value(a), value(b));
    return push(std::move(n));
  }

  NodeId slice(NodeId a, std::size_t begin, std::size_t width) {
    Node n = make(OpKind::kSlice, {a});
    n.value = slice_cols(value(a), begin, width);
    n.begin = begin;
    return push(std::move(n));
  }

  NodeId mul(NodeId a, NodeId b) {
    Node n = make(OpKind::kMul, {a, b});
    n.value = hadamard(value(a), value(b));
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) {
    Node n = make(OpKind::kAdd, {a, b});
    n.value = ::geco::add(value(a), value(b));
    return push(std::move(n));
  }

  NodeId scale(NodeId a, double s) {
    Node n = make(OpKind::kScale, {a});
    n.value = value(a);
    for (double& v : n.value.values()) v *= s;
    n.scalar = s;
    return push(std::move(n));
  }

  /// Column-wise circular convolution of u by z (both N x d).
  NodeId conv(NodeId u, NodeId z) {
    Node n = make(OpKind::kConv, {u, z});
    n.value = conv_columns(value(u), value(z), false, policy_);
    return push(std::move(n));
  }

  NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta) {
    Node n = make(OpKind::kLayerNorm, {x, gamma, beta});
    const Matrix ones(1, value(x).cols(), 1.0), zeros(1, value(x).cols());
    n.aux = ::geco::layer_norm(value(x), ones, zeros, &n.row_stats);
    n.value = ::geco::layer_norm(value(x), value(gamma), value(beta));
    return push(std::move(n));
  }

  /// Batch normalization over rows. Without `fixed` the statistics of this
  /// batch are used (and differentiated through); with `fixed` they are
  /// constants, as at inference.
  NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta,
                    std::optional<ColumnStats> fixed = std::nullopt) {
    Node n = make(OpKind::kBatchNorm, {x, gamma, beta});
    n.batch_stats = !fixed.has_value();
    n.col_stats = fixed ? std::move(*fixed) : column_stats(value(x));
    const std::size_t d = value(x).cols();
    n.aux = ::geco::batch_norm(value(x), Matrix(1, d, 1.0), Matrix(1, d), n.col_stats);
    n.value = ::geco::batch_norm(value(x), value(gamma), value(beta), n.col_stats);
    return push(std::move(n));
  }

  const ColumnStats& batch_stats(NodeId id) const { return at(id).col_stats; }

  NodeId activation(Activation act, NodeId x) {
    Node n = make(OpKind::kActivation, {x});
    n.act = act;
    n.value = apply_activation(act, value(x));
    return push(std::move(n));
  }

  /// Mean negative log-likelihood of labels[r] under softmax(logits[r]) over
  /// the listed rows.
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels,
                               std::vector<std::size_t> rows) {
    const Matrix& z = value(logits);
    if (labels.size() != z.rows())
      throw InputError("softmax_cross_entropy: one label per row required");
    if (rows.empty()) throw InputError("softmax_cross_entropy: no rows selected");
    Node n = make(OpKind::kSoftmaxCrossEntropy, {logits});
    n.aux = softmax_rows(z);
    double loss = 0.0;
    for (std::size_t r : rows) {
      const int y = labels.at(r);
      if (y < 0 || static_cast<std::size_t>(y) >= z.cols())
        throw InputError("softmax_cross_entropy: label out of range");
      loss -= std::log(std::max(n.aux(r, y), std::numeric_limits<double>::min()));
    }
    n.value = Matrix(1, 1, loss / static_cast<double>(rows.size()));
    n.labels = std::move(labels);
    n.index = std::move(rows);
    return push(std::move(n));
  }

  NodeId mean(NodeId x) {
    Node n = make(OpKind::kMean, {x});
    const auto v = value(x).values();
    n.value = Matrix(1, 1, std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
    return push(std::move(n));
  }

  NodeId sum(NodeId x) {
    Node n = make(OpKind::kSum, {x});
    const auto v = value(x).values();
    n.value = Matrix(1, 1, std::accumulate(v.begin(), v.end(), 0.0));
    return push(std::move(n));
  }

  /// Row gather y[r] = x[source[r]]; `source` must be a permutation.
  NodeId permute_rows(NodeId x, std::vector<std::size_t> source) {
    const Matrix& v = value(x);
    if (source.size() != v.rows()) throw InputError("permute_rows: index size mismatch");
    Node n = make(OpKind::kPermuteRows, {x});
    n.value = Matrix(v.rows(), v.cols());
    for (std::size_t r = 0; r < source.size(); ++r) {
      if (source[r] >= v.rows()) throw InputError("permute_rows: index out of range");
      std::copy(v.row(source[r]).begin(), v.row(source[r]).end(), n.value.row(r).begin());
    }
    n.index = std::move(source);
    return push(std::move(n));
  }

  /// Generic entry for kinds that need no attributes beyond their inputs.
  NodeId record(OpKind kind, std::span<const NodeId> in) {
    auto need = [&](std::size_t k) {
      if (in.size() != k)
        throw ContractError("record: wrong number of inputs for op kind");
    };
    switch (kind) {
      case OpKind::kAffine:
        if (in.size() == 2) return affine(in[0], in[1]);
        need(3);
        return affine(in[0], in[1], in[2]);
      case OpKind::kConcat: need(2); return concat(in[0], in[1]);
      case OpKind::kMul: need(2); return mul(in[0], in[1]);
      case OpKind::kAdd: need(2); return add(in[0], in[1]);
      case OpKind::kConv: need(2); return conv(in[0], in[1]);
      case OpKind::kLayerNorm: need(3); return layer_norm(in[0], in[1], in[2]);
      case OpKind::kBatchNorm: need(3); return batch_norm(in[0], in[1], in[2]);
      case OpKind::kMean: need(1); return mean(in[0]);
      case OpKind::kSum: need(1); return sum(in[0]);
      default:
        throw ContractError("record: op kind " + std::to_string(static_cast<int>(kind)) +
                            " needs attributes or is not recordable generically");
    }
  }

  /// Reverse sweep from a 1 x 1 loss node.
  Grad backward(NodeId loss) const {
    const Node& root = at(loss);
    if (root.value.rows() != 1 || root.value.cols() != 1)
      throw ContractError("backward: loss must be a scalar (1 x 1) node");
    Grad grad;
    grad.adjoints.resize(nodes_.size());
    auto& adj = grad.adjoints;
    adj[loss] = Matrix(1, 1, 1.0);
    for (std::size_t id = loss + 1; id-- > 0;) {
      const Node& n = nodes_[id];
      if (adj[id].empty() || !n.requires_grad) continue;
      propagate(n, adj[id], adj);
    }
    for (std::size_t id = 0; id <= loss; ++id) {
      const Node& n = nodes_[id];
      if (n.kind != OpKind::kParameter) continue;
      const Matrix g = adj[id].empty() ? Matrix(n.value.rows(), n.value.cols()) : adj[id];
      auto [it, inserted] = grad.params.try_emplace(n.param, g);
      if (!inserted) accumulate(it->second, g);
    }
    return grad;
  }

 private:
  struct Node {
    OpKind kind = OpKind::kInput;
    std::array<NodeId, 3> in{};
    std::size_t nin = 0;
    bool requires_grad = false;
    Matrix value;
    Matrix aux;  // normalized input or softmax probabilities
    const Matrix* param = nullptr;
    std::shared_ptr<const CsrGraph> graph;
    std::vector<std::size_t> index;
    std::vector<int> labels;
    RowStats row_stats;
    ColumnStats col_stats;
    bool batch_stats = true;
    Activation act = Activation::kRelu;
    double scalar = 1.0;
    std::size_t begin = 0;
  };

  const Node& at(NodeId id) const {
    if (id >= nodes_.size()) throw ContractError("tape: unknown node id");
    return nodes_[id];
  }

  Node make(OpKind kind, std::initializer_list<NodeId> inputs) const {
    Node n;
    n.kind = kind;
    for (NodeId i : inputs) add_input(n, i);
    return n;
  }

  void add_input(Node& n, NodeId i) const {
    const Node& src = at(i);  // inputs must already be on the tape
    n.in[n.nin++] = i;
    n.requires_grad = n.requires_grad || src.requires_grad;
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  static void accumulate(Matrix& dst, const Matrix& g) {
    if (dst.empty() && !g.empty()) {
      dst = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) dst.data()[i] += g.data()[i];
  }

  void send(std::vector<Matrix>& adj, NodeId target, const Matrix& g) const {
    if (!nodes_[target].requires_grad) return;
    accumulate(adj[target], g);
  }

  void propagate(const Node& n, const Matrix& g, std::vector<Matrix>& adj) const {
    auto val = [&](std::size_t k) -> const Matrix& { return nodes_[n.in[k]].value; };
    auto wants = [&](std::size_t k) { return nodes_[n.in[k]].requires_grad; };
    switch (n.kind) {
      case OpKind::kInput:
      case OpKind::kParameter:
        return;
      case OpKind::kAffine:
        if (wants(0)) send(adj, n.in[0], matmul_nt(g, val(1)));
        if (wants(1)) send(adj, n.in[1], matmul_tn(val(0), g));
        if (n.nin == 3 && wants(2)) send(adj, n.in[2], column_sums(g));
        return;
      case OpKind::kSpmm:
        send(adj, n.in[0], ::geco::spmm(transpose(*n.graph), g));
        return;
      case OpKind::kConcat: {
        const std::size_t ca = val(0).cols();
        if (wants(0)) send(adj, n.in[0], slice_cols(g, 0, ca));
        if (wants(1)) send(adj, n.in[1], slice_cols(g, ca, g.cols() - ca));
        return;
      }
      case OpKind::kSlice: {
        Matrix full(val(0).rows(), val(0).cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          std::copy(g.row(i).begin(), g.row(i).end(), full.row(i).begin() + n.begin);
        send(adj, n.in[0], full);
        return;
      }
      case OpKind::kMul:
        if (wants(0)) send(adj, n.in[0], hadamard(g, val(1)));
        if (wants(1)) send(adj, n.in[1], hadamard(g, val(0)));
        return;
      case OpKind::kAdd:
        send(adj, n.in[0], g);
        send(adj, n.in[1], g);
        return;
      case OpKind::kScale: {
        Matrix s = g;
        for (double& v : s.values()) v *= n.scalar;
        send(adj, n.in[0], s);
        return;
      }
      case OpKind::kConv:
        // y = u * z  =>  du = corr(g, z), dz = corr(g, u).
        if (wants(0)) send(adj, n.in[0], conv_columns(g, val(1), true, policy_));
        if (wants(1)) send(adj, n.in[1], conv_columns(g, val(0), true, policy_));
        return;
      case OpKind::kLayerNorm:
        norm_backward(n, g, adj, /*rowwise=*/true);
        return;
      case OpKind::kBatchNorm:
        norm_backward(n, g, adj, /*rowwise=*/false);
        return;
      case OpKind::kActivation: {
        Matrix dx = g;
        const Matrix& x = val(0);
        for (std::size_t i = 0; i < dx.size(); ++i)
          dx.data()[i] *= activate_derivative(n.act, x.data()[i]);
        send(adj, n.in[0], dx);
        return;
      }
      case OpKind::kSoftmaxCrossEntropy: {
        Matrix dz(n.aux.rows(), n.aux.cols());
        const double w = g(0, 0) / static_cast<double>(n.index.size());
        for (std::size_t r : n.index) {
          for (std::size_t c = 0; c < dz.cols(); ++c) dz(r, c) += w * n.aux(r, c);
          dz(r, n.labels[r]) -= w;
        }
        send(adj, n.in[0], dz);
        return;
      }
      case OpKind::kMean:
      case OpKind::kSum: {
        const Matrix& x = val(0);
        const double s = n.kind == OpKind::kMean ? g(0, 0) / static_cast<double>(x.size()) : g(0, 0);
        send(adj, n.in[0], Matrix(x.rows(), x.cols(), s));
        return;
      }
      case OpKind::kPermuteRows: {
        Matrix dx(g.rows(), g.cols());
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          auto dst = dx.row(n.index[r]);
          auto src = g.row(r);
          for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += src[c];
        }
        send(adj, n.in[0], dx);
        return;
      }
    }
    throw ContractError("backward: unsupported op kind");
  }

  // Shared adjoint of layer norm (statistics per row) and batch norm
  // (statistics per column).
  void norm_backward(const Node& n, const Matrix& g, std::vector<Matrix>& adj, bool rowwise) const {
    const Matrix& xhat = n.aux;
    const Matrix& gamma = nodes_[n.in[1]].value;
    const std::size_t rows = g.rows(), cols = g.cols();
    if (nodes_[n.in[1]].requires_grad || nodes_[n.in[2]].requires_grad) {
      Matrix dgamma(1, cols), dbeta(1, cols);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
          dgamma(0, j) += g(i, j) * xhat(i, j);
          dbeta(0, j) += g(i, j);
        }
      send(adj, n.in[1], Matrix(gamma.rows(), gamma.cols(), std::vector<double>(dgamma.values().begin(), dgamma.values().end())));
      send(adj, n.in[2], Matrix(gamma.rows(), gamma.cols(), std::vector<double>(dbeta.values().begin(), dbeta.values().end())));
    }
    if (!nodes_[n.in[0]].requires_grad) return;
    Matrix dx(rows, cols);
    if (rowwise) {
      for (std::size_t i = 0; i < rows; ++i) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          const double gh = g(i, j) * gamma.data()[j];
          s1 += gh;
          s2 += gh * xhat(i, j);
        }
        const double inv = n.row_stats.inv_std[i], m = static_cast<double>(cols);
        for (std::size_t j = 0; j < cols; ++j) {
          const double gh = g(i, j) * gamma.data()[j];
          dx(i, j) = inv * (gh - s1 / m - xhat(i, j) * s2 / m);
        }
      }
    } else {
      for (std::size_t j = 0; j < cols; ++j) {
        const double inv = 1.0 / std::sqrt(n.col_stats.var[j] + kNormEps);
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          const double gh = g(i, j) * gamma.data()[j];
          s1 += gh;
          s2 += gh * xhat(i, j);
        }
        const double m = static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i) {
          const double gh = g(i, j) * gamma.data()[j];
          dx(i, j) = n.batch_stats ? inv * (gh - s1 / m - xhat(i, j) * s2 / m) : inv * gh;
        }
      }
    }
    send(adj, n.in[0], dx);
  }

  ExecPolicy policy_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Finite-difference verification.

/// Records a scalar function of the parameters onto the given tape and
/// returns its loss node.
using RecordedFn = std::function<NodeId(Tape&)>;

struct GradcheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  std::size_t min_coords = 64;
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error, so coordinates whose true
  /// gradient vanishes are judged on absolute error.
  double denom_floor = 1e-6;
};

struct CoordinateCheck {
  std::size_t param = 0;  // index into the parameter list
  std::size_t index = 0;  // flat index into that parameter
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<CoordinateCheck> coords;
  double max_rel_error = 0.0;
  bool passed = false;
};

inline double evaluate(const RecordedFn& f) {
  Tape tape;
  return tape.value(f(tape))(0, 0);
}

/// Compares `analytic` against central differences of f at a random subset
/// (at least min_coords, or all) of the coordinates of `params`. Parameters are
/// perturbed in place and restored.
inline GradcheckReport gradcheck(std::span<Matrix* const> params, const RecordedFn& f,
                                 const std::vector<Matrix>& analytic,
                                 const GradcheckOptions& opts = {}) {
  if (!(opts.step > 0.0)) throw InputError("gradcheck: step must be positive");
  if (analytic.size() != params.size()) throw InputError("gradcheck: gradient count mismatch");
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!analytic[p].same_shape(*params[p])) throw InputError("gradcheck: gradient shape mismatch");
    for (std::size_t i = 0; i < params[p]->size(); ++i) all.emplace_back(p, i);
  }
  Rng rng = make_rng(opts.seed, {0x67726164});
  std::shuffle(all.begin(), all.end(), rng);
  if (all.size() > opts.min_coords) all.resize(opts.min_coords);
  std::sort(all.begin(), all.end());

  GradcheckReport report;
  for (const auto& [p, i] : all) {
    double& theta = params[p]->data()[i];
    const double saved = theta;
    theta = saved + opts.step;
    const double up = evaluate(f);
    theta = saved - opts.step;
    const double down = evaluate(f);
    theta = saved;
    const double numeric = (up - down) / (2.0 * opts.step);
    const double a = analytic[p].data()[i];
    if (!std::isfinite(numeric) || !std::isfinite(a))
      throw NumericError("gradcheck: non-finite value at parameter " + std::to_string(p) +
                         ", coordinate " + std::to_string(i));
    const double denom = std::max({std::abs(a), std::abs(numeric), opts.denom_floor});
    CoordinateCheck c{p, i, a, numeric, std::abs(a - numeric) / denom};
    report.max_rel_error = std::max(report.max_rel_error, c.rel_error);
    report.coords.push_back(c);
  }
  report.passed = report.max_rel_error < opts.tol;
  return report;
}

/// Analytic gradients from the tape, then the finite-difference comparison.
inline GradcheckReport gradcheck(std::span<Matrix* const> params, const RecordedFn& f,
                                 const GradcheckOptions& opts = {}) {
  Tape tape;
  const NodeId loss = f(tape);
  const Grad grad = tape.backward(loss);
  std::vector<Matrix> analytic;
  for (Matrix* p : params) analytic.push_back(grad.of(*p));
  return gradcheck(params, f, analytic, opts);
}

}  // namespace geco

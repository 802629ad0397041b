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

// GECO layers, the end-to-end node classifier, its training loop, and the
// dense-attention baseline used for timing comparisons.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geco/autograd.hpp"
#include "geco/core.hpp"
#include "geco/graph.hpp"
#include "geco/io.hpp"
#include "geco/kernels.hpp"
#include "geco/ops.hpp"
#include "geco/random.hpp"

namespace geco {

enum class PermStrategy { kNatural, kStaticRandom, kDynamicRandom };

/// Accepts the short names (natural, static, dynamic) and the long ones
/// (static_random, dynamic_random).
inline PermStrategy parse_perm_strategy(std::string_view s) {
  if (s == "natural") return PermStrategy::kNatural;
  if (s == "static" || s == "static_random") return PermStrategy::kStaticRandom;
  if (s == "dynamic" || s == "dynamic_random") return PermStrategy::kDynamicRandom;
  throw InputError("unknown permutation strategy '" + std::string(s) +
                   "' (expected natural, static or dynamic)");
}

inline std::string_view to_string(PermStrategy s) {
  switch (s) {
    case PermStrategy::kNatural: return "natural";
    case PermStrategy::kStaticRandom: return "static";
    case PermStrategy::kDynamicRandom: return "dynamic";
  }
  return "?";
}

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t hidden = 32;
  std::size_t order = 2;
  std::size_t pos_dim = 16;
  std::size_t filter_hidden = 64;
  std::size_t classes = 2;
  PermStrategy perm_strategy = PermStrategy::kNatural;
  std::uint64_t seed = 0;
  std::size_t epochs = 200;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double dropout = 0.1;
  double held_out_fraction = 0.2;
  // Weight of the newest batch in the running statistics. Training batches
  // are the whole graph, so the latest statistics are exact for the current
  // parameters.
  double bn_momentum = 1.0;
  double grad_clip = 1.0;  // global L2 norm bound on the gradient; 0 disables
  bool degree_encoding = true;
  std::size_t index_encoding_dim = 0;

  void validate() const {
    if (layers < 1) throw InputError("config: layers must be >= 1");
    if (hidden < 1) throw InputError("config: hidden must be >= 1");
    if (order < 1) throw InputError("config: order must be >= 1");
    if (classes < 2) throw InputError("config: classes must be >= 2");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw InputError("config: learning rate must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("config: momentum must be in [0, 1)");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InputError("config: dropout must be in [0, 1)");
    if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0))
      throw InputError("config: held-out fraction must be in [0, 1)");
    if (!(grad_clip >= 0.0) || !std::isfinite(grad_clip))
      throw InputError("config: gradient clip must be finite and >= 0");
    if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0))
      throw InputError("config: batch-norm momentum must be in [0, 1]");
  }
};

// ---------------------------------------------------------------------------
// Encodings

/// Column concatenation of node features with extra encodings.
inline FeatureMatrix pe_concat(const FeatureMatrix& x, const FeatureMatrix& u) {
  if (u.empty() && u.rows() == 0) return x;
  if (u.rows() != x.rows())
    throw InputError("pe_concat: row mismatch (" + std::to_string(x.rows()) + " vs " +
                     std::to_string(u.rows()) + ")");
  return concat_cols(x, u);
}

/// N x 1 column of node degrees (stored neighbors).
inline FeatureMatrix degree_encoding(const CsrGraph& g) {
  Matrix u(g.num_nodes, 1);
  for (std::size_t v = 0; v < g.num_nodes; ++v) u(v, 0) = static_cast<double>(g.degree(v));
  return u;
}

/// Sinusoidal code of each node's index in the current ordering.
inline FeatureMatrix index_encoding(std::size_t n, std::size_t dim) {
  return positional_embedding(n, dim);
}

inline FeatureMatrix encode_inputs(const CsrGraph& g, const FeatureMatrix& x,
                                   const ModelConfig& config) {
  if (x.rows() != g.num_nodes) throw InputError("encode_inputs: feature rows != node count");
  FeatureMatrix out = x;
  if (config.degree_encoding) out = pe_concat(out, degree_encoding(g));
  if (config.index_encoding_dim > 0)
    out = pe_concat(out, index_encoding(g.num_nodes, config.index_encoding_dim));
  return out;
}

inline std::size_t encoded_width(std::size_t features, const ModelConfig& config) {
  return features + (config.degree_encoding ? 1 : 0) + config.index_encoding_dim;
}

// ---------------------------------------------------------------------------
// Parameters

struct NormParams {
  Matrix gamma;  // 1 x w
  Matrix beta;   // 1 x w

  static NormParams identity(std::size_t w) { return {Matrix(1, w, 1.0), Matrix(1, w)}; }
};

struct GecoLayerParams {
  GcbParams gcb;         // 2d -> d
  NormParams pre_norm;   // batch norm over 2d
  NormParams ln1, ln2;   // layer norms over d
  Matrix ffn_w1, ffn_w2; // d x d
  ColumnStats running;   // batch-norm inference statistics (buffer, not trained)
  double dropout_rate = 0.0;

  std::size_t width() const noexcept { return ffn_w1.rows(); }

  void validate() const {
    const std::size_t d = width();
    gcb.validate();
    if (gcb.proj.w.rows() != 2 * d || gcb.width() != d || pre_norm.gamma.size() != 2 * d ||
        pre_norm.beta.size() != 2 * d || ln1.gamma.size() != d || ln1.beta.size() != d ||
        ln2.gamma.size() != d || ln2.beta.size() != d || ffn_w1.cols() != d ||
        ffn_w2.rows() != d || ffn_w2.cols() != d || running.mean.size() != 2 * d ||
        running.var.size() != 2 * d)
      throw ContractError("GecoLayerParams: widths do not chain d -> 2d -> d");
  }
};

struct ModelParams {
  Matrix in_w, in_b;  // encoded width -> d
  std::vector<GecoLayerParams> layers;
  Matrix head_w, head_b;  // d -> classes
};

inline GecoLayerParams init_geco_layer(std::size_t d, const ModelConfig& config, std::size_t n_ref,
                                       Rng& rng) {
  GecoLayerParams p;
  p.gcb = init_gcb_params(2 * d, d, config.order, n_ref, rng, config.pos_dim,
                          config.filter_hidden);
  p.pre_norm = NormParams::identity(2 * d);
  p.ln1 = NormParams::identity(d);
  p.ln2 = NormParams::identity(d);
  p.ffn_w1 = glorot_uniform(d, d, rng);
  p.ffn_w2 = glorot_uniform(d, d, rng);
  p.running = {std::vector<double>(2 * d, 0.0), std::vector<double>(2 * d, 1.0)};
  p.dropout_rate = config.dropout;
  return p;
}

inline constexpr std::uint64_t kInitStream = 0x494e4954;
inline constexpr std::uint64_t kStaticPermStream = 0x53504552;
inline constexpr std::uint64_t kDynamicPermStream = 0x44504552;
inline constexpr std::uint64_t kDropoutStream = 0x44524f50;
inline constexpr std::uint64_t kSplitStream = 0x53504c54;

/// `features` is the raw feature width; `n_ref` sets the initial filter scale.
inline ModelParams init_model(const ModelConfig& config, std::size_t features, std::size_t n_ref) {
  config.validate();
  Rng rng = make_rng(config.seed, {kInitStream});
  const std::size_t d = config.hidden;
  ModelParams m;
  m.in_w = glorot_uniform(encoded_width(features, config), d, rng);
  m.in_b = Matrix(1, d);
  for (std::size_t l = 0; l < config.layers; ++l)
    m.layers.push_back(init_geco_layer(d, config, n_ref, rng));
  m.head_w = glorot_uniform(d, config.classes, rng);
  m.head_b = Matrix(1, config.classes);
  return m;
}

/// Trainable buffers in declaration order (the checkpoint order).
template <typename Params>
auto parameter_list(Params& m) {
  using Ptr = std::conditional_t<std::is_const_v<Params>, const Matrix*, Matrix*>;
  std::vector<Ptr> out{&m.in_w, &m.in_b};
  for (auto& l : m.layers) {
    for (auto* p : {&l.gcb.proj.w, &l.gcb.proj.b, &l.gcb.filters.w1, &l.gcb.filters.b1,
                    &l.gcb.filters.w2, &l.gcb.filters.b2, &l.pre_norm.gamma, &l.pre_norm.beta,
                    &l.ln1.gamma, &l.ln1.beta, &l.ln2.gamma, &l.ln2.beta, &l.ffn_w1, &l.ffn_w2})
      out.push_back(p);
  }
  out.push_back(&m.head_w);
  out.push_back(&m.head_b);
  return out;
}

// ---------------------------------------------------------------------------
// Permutations and dropout

/// Permutation applied before `layer`. Natural is the identity; static draws a
/// single permutation from the seed; dynamic draws a fresh one per
/// (seed, epoch, layer).
inline Permutation layer_permutation(const ModelConfig& config, std::size_t n, std::size_t epoch,
                                     std::size_t layer) {
  switch (config.perm_strategy) {
    case PermStrategy::kNatural:
      return Permutation::identity(n);
    case PermStrategy::kStaticRandom: {
      Rng rng = make_rng(config.seed, {kStaticPermStream});
      return Permutation::random(n, rng);
    }
    case PermStrategy::kDynamicRandom: {
      Rng rng = make_rng(config.seed, {kDynamicPermStream, epoch, layer});
      return Permutation::random(n, rng);
    }
  }
  throw InputError("layer_permutation: invalid strategy");
}

/// Inverted-dropout mask: entries 0 or 1/(1-rate).
inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = keep(rng) ? s : 0.0;
  return m;
}

struct ForwardOptions {
  bool training = false;
  std::size_t epoch = 0;
  ExecPolicy policy{};
};

// ---------------------------------------------------------------------------
// Plain (untaped) forward

/// One GECO layer: h = GCB(BN(LCB(x))), out1 = LN(drop(h) + x),
/// out = LN(drop(gelu(out1 W1)) W2 + out1). Training mode uses batch
/// statistics, and dropout when an engine is supplied.
inline FeatureMatrix geco_layer_forward(const FeatureMatrix& x, const CsrGraph& g_norm,
                                        const GecoLayerParams& p, bool training,
                                        Rng* dropout_rng = nullptr, ExecPolicy policy = {}) {
  p.validate();
  if (x.cols() != p.width())
    throw ContractError("geco_layer_forward: input width " + std::to_string(x.cols()) +
                        " != layer width " + std::to_string(p.width()));
  const bool drop = training && dropout_rng && p.dropout_rate > 0.0;
  Matrix h = lcb(x, g_norm);
  h = batch_norm(h, p.pre_norm.gamma, p.pre_norm.beta, training ? column_stats(h) : p.running);
  h = gcb_forward(h, p.gcb, policy);
  if (drop) h = hadamard(h, dropout_mask(h.rows(), h.cols(), p.dropout_rate, *dropout_rng));
  const Matrix out1 = layer_norm(add(h, x), p.ln1.gamma, p.ln1.beta);
  Matrix f = apply_activation(Activation::kGelu, matmul(out1, p.ffn_w1));
  if (drop) f = hadamard(f, dropout_mask(f.rows(), f.cols(), p.dropout_rate, *dropout_rng));
  f = matmul(f, p.ffn_w2);
  return layer_norm(add(f, out1), p.ln2.gamma, p.ln2.beta);
}

/// Normalized graph and encoded features, computed once per dataset.
struct PreparedInputs {
  std::shared_ptr<const CsrGraph> g_norm;
  FeatureMatrix x;
};

inline PreparedInputs prepare_inputs(const CsrGraph& g, const FeatureMatrix& x,
                                     const ModelConfig& config) {
  return {std::make_shared<const CsrGraph>(normalize_symmetric(g)), encode_inputs(g, x, config)};
}

inline void check_model(const ModelConfig& config, const ModelParams& params, std::size_t width) {
  if (params.layers.size() != config.layers)
    throw ContractError("model: parameter layer count != config.layers");
  if (params.in_w.rows() != width)
    throw ContractError("model: encoded input width " + std::to_string(width) +
                        " != input weight rows " + std::to_string(params.in_w.rows()));
  if (params.head_w.cols() != config.classes)
    throw ContractError("model: head width != config.classes");
}

/// Logits in input node order.
inline Matrix model_forward(const PreparedInputs& in, const ModelConfig& config,
                            const ModelParams& params, const ForwardOptions& opts = {}) {
  check_model(config, params, in.x.cols());
  const std::size_t n = in.x.rows();
  Matrix h = affine(in.x, params.in_w, params.in_b);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Rng drop = make_rng(config.seed, {kDropoutStream, opts.epoch, l});
    const Permutation perm = layer_permutation(config, n, opts.epoch, l);
    if (perm.is_identity()) {
      h = geco_layer_forward(h, *in.g_norm, params.layers[l], opts.training, &drop, opts.policy);
    } else {
      const Matrix out = geco_layer_forward(permute_rows(h, perm), permute_graph(*in.g_norm, perm),
                                            params.layers[l], opts.training, &drop, opts.policy);
      h = permute_rows(out, perm.inverse());
    }
  }
  return affine(h, params.head_w, params.head_b);
}

inline Matrix model_forward(const CsrGraph& g, const FeatureMatrix& x, const ModelConfig& config,
                            const ModelParams& params, const ForwardOptions& opts = {}) {
  return model_forward(prepare_inputs(g, x, config), config, params, opts);
}

/// Mean of pi^-1 f(pi A pi^T, pi X) over the given permutations.
inline Matrix janossy_average(const CsrGraph& g, const FeatureMatrix& x, const ModelConfig& config,
                              const ModelParams& params, std::span<const Permutation> perms,
                              const ForwardOptions& opts = {}) {
  if (perms.empty()) throw InputError("janossy_average: no permutations");
  Matrix acc;
  for (const Permutation& p : perms) {
    const LabeledGraph pg = permute_graph(g, x, {}, p);
    const Matrix y = permute_rows(model_forward(pg.graph, pg.features, config, params, opts),
                                  p.inverse());
    if (acc.empty()) acc = Matrix(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.size(); ++i) acc.data()[i] += y.data()[i];
  }
  for (double& v : acc.values()) v /= static_cast<double>(perms.size());
  return acc;
}

/// All n! permutations in lexicographic order of `forward`.
inline std::vector<Permutation> all_permutations(std::size_t n) {
  if (n > 8) throw SizeError("all_permutations: n > 8");
  std::vector<Permutation> out;
  Permutation p = Permutation::identity(n);
  do out.push_back(p);
  while (std::next_permutation(p.forward.begin(), p.forward.end()));
  return out;
}

// ---------------------------------------------------------------------------
// Taped forward

/// Parameter nodes of one layer, bound to the matrices in `p`.
inline NodeId record_gcb(Tape& t, NodeId x, const GcbParams& p) {
  p.validate();
  const std::size_t n = t.value(x).rows(), d = p.width(), k = p.order;
  const NodeId z = t.affine(x, t.parameter(p.proj.w), t.parameter(p.proj.b));
  const NodeId pe = t.input(positional_embedding(n, p.filters.pos_dim));
  const NodeId hid = t.activation(
      Activation::kSine, t.affine(pe, t.parameter(p.filters.w1), t.parameter(p.filters.b1)));
  const NodeId taps = t.affine(hid, t.parameter(p.filters.w2), t.parameter(p.filters.b2));
  NodeId v = t.slice(z, k * d, d);
  for (std::size_t i = 0; i < k; ++i)
    v = t.mul(t.slice(z, i * d, d), t.conv(v, t.slice(taps, i * d, d)));
  return v;
}

struct TapedLayer {
  NodeId out;
  NodeId batch_norm;
};

inline TapedLayer record_geco_layer(Tape& t, NodeId x, std::shared_ptr<const CsrGraph> g_norm,
                                    const GecoLayerParams& p, bool training,
                                    Rng* dropout_rng = nullptr) {
  p.validate();
  if (t.value(x).cols() != p.width())
    throw ContractError("record_geco_layer: input width != layer width");
  const bool drop = training && dropout_rng && p.dropout_rate > 0.0;
  const NodeId agg = t.concat(x, t.spmm(std::move(g_norm), x));
  const NodeId bn = t.batch_norm(agg, t.parameter(p.pre_norm.gamma), t.parameter(p.pre_norm.beta),
                                 training ? std::nullopt : std::optional<ColumnStats>(p.running));
  NodeId h = record_gcb(t, bn, p.gcb);
  if (drop) {
    const Matrix& hv = t.value(h);
    h = t.mul(h, t.input(dropout_mask(hv.rows(), hv.cols(), p.dropout_rate, *dropout_rng)));
  }
  const NodeId out1 =
      t.layer_norm(t.add(h, x), t.parameter(p.ln1.gamma), t.parameter(p.ln1.beta));
  NodeId f = t.activation(Activation::kGelu, t.affine(out1, t.parameter(p.ffn_w1)));
  if (drop) {
    const Matrix& fv = t.value(f);
    f = t.mul(f, t.input(dropout_mask(fv.rows(), fv.cols(), p.dropout_rate, *dropout_rng)));
  }
  f = t.affine(f, t.parameter(p.ffn_w2));
  const NodeId out =
      t.layer_norm(t.add(f, out1), t.parameter(p.ln2.gamma), t.parameter(p.ln2.beta));
  return {out, bn};
}

struct TapedModel {
  NodeId logits;
  std::vector<NodeId> batch_norms;  // one per layer
};

inline TapedModel record_model(Tape& t, const PreparedInputs& in, const ModelConfig& config,
                               const ModelParams& params, const ForwardOptions& opts = {}) {
  check_model(config, params, in.x.cols());
  const std::size_t n = in.x.rows();
  TapedModel out;
  NodeId h = t.affine(t.input(in.x), t.parameter(params.in_w), t.parameter(params.in_b));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Rng drop = make_rng(config.seed, {kDropoutStream, opts.epoch, l});
    const Permutation perm = layer_permutation(config, n, opts.epoch, l);
    TapedLayer layer;
    if (perm.is_identity()) {
      layer = record_geco_layer(t, h, in.g_norm, params.layers[l], opts.training, &drop);
      h = layer.out;
    } else {
      // Gather form: row r of P h is row inverse[r] of h.
      const NodeId hp = t.permute_rows(h, perm.inverse().forward);
      auto gp = std::make_shared<const CsrGraph>(permute_graph(*in.g_norm, perm));
      layer = record_geco_layer(t, hp, std::move(gp), params.layers[l], opts.training, &drop);
      h = t.permute_rows(layer.out, perm.forward);
    }
    out.batch_norms.push_back(layer.batch_norm);
  }
  out.logits = t.affine(h, t.parameter(params.head_w), t.parameter(params.head_b));
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;  // training loss (eval mode for epoch 0)
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
};

struct TrainState {
  ModelParams params;
  std::vector<Matrix> velocity;  // momentum buffers, parameter order
  std::size_t epoch = 0;
  std::uint64_t seed = 0;  // every stochastic stream is derived from (seed, epoch)
};

struct NodeSplit {
  std::vector<std::size_t> train, heldout;
};

struct TrainResult {
  TrainState state;
  std::vector<EpochMetrics> history;
  NodeSplit split;
};

struct TrainingError : NumericError {
  std::size_t epoch;
  TrainingError(const std::string& what, std::size_t e) : NumericError(what), epoch(e) {}
};

/// Seeded shuffle; the first round(fraction * n) nodes are held out.
inline NodeSplit split_nodes(std::size_t n, double held_out_fraction, std::uint64_t seed) {
  Rng rng = make_rng(seed, {kSplitStream});
  const Permutation p = Permutation::random(n, rng);
  const auto held = static_cast<std::size_t>(std::llround(held_out_fraction * static_cast<double>(n)));
  NodeSplit s;
  for (std::size_t i = 0; i < n; ++i) (p.forward[i] < held ? s.heldout : s.train).push_back(i);
  return s;
}

inline std::vector<int> predict(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

inline double accuracy(const Matrix& logits, std::span<const int> labels,
                       std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  const auto pred = predict(logits);
  std::size_t hits = 0;
  for (std::size_t r : rows) hits += pred[r] == labels[r];
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

inline double cross_entropy(const Matrix& logits, std::span<const int> labels,
                            std::span<const std::size_t> rows) {
  const Matrix p = softmax_rows(logits);
  double loss = 0.0;
  for (std::size_t r : rows)
    loss -= std::log(std::max(p(r, labels[r]), std::numeric_limits<double>::min()));
  return rows.empty() ? 0.0 : loss / static_cast<double>(rows.size());
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Full-graph SGD with momentum on the masked cross-entropy of the training
/// split. history[0] holds the metrics of the initial parameters.
inline TrainResult train(const CsrGraph& g, const FeatureMatrix& x, std::span<const int> labels,
                         const ModelConfig& config, const EpochCallback& on_epoch = {}) {
  config.validate();
  const std::size_t n = g.num_nodes;
  if (x.rows() != n || labels.size() != n)
    throw InputError("train: features and labels must have one row per node");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= config.classes)
      throw InputError("train: label " + std::to_string(y) + " outside [0, classes)");
  const std::vector<int> label_vec(labels.begin(), labels.end());

  TrainResult result;
  result.split = split_nodes(n, config.held_out_fraction, config.seed);
  if (result.split.train.empty()) throw InputError("train: empty training split");
  const PreparedInputs in = prepare_inputs(g, x, config);
  TrainState& st = result.state;
  st.seed = config.seed;
  st.params = init_model(config, x.cols(), n);
  auto params = parameter_list(st.params);
  for (const Matrix* p : params) st.velocity.emplace_back(p->rows(), p->cols());

  auto record = [&](std::size_t epoch, double loss) {
    const Matrix logits = model_forward(in, config, st.params, {false, epoch, {}});
    EpochMetrics m{epoch, loss, accuracy(logits, label_vec, result.split.train),
                   accuracy(logits, label_vec, result.split.heldout)};
    if (epoch == 0) m.loss = cross_entropy(logits, label_vec, result.split.train);
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  };
  record(0, 0.0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Tape tape;
    const TapedModel fwd = record_model(tape, in, config, st.params, {true, epoch, {}});
    const NodeId loss = tape.softmax_cross_entropy(fwd.logits, label_vec, result.split.train);
    const double loss_value = tape.value(loss)(0, 0);
    if (!std::isfinite(loss_value))
      throw TrainingError("training diverged: non-finite loss at epoch " + std::to_string(epoch),
                          epoch);
    const Grad grad = tape.backward(loss);
    std::vector<Matrix> grads;
    double sq = 0.0;
    for (const Matrix* p : params) {
      grads.push_back(grad.of(*p));
      for (double v : grads.back().values()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    const double clip = config.grad_clip > 0.0 && norm > config.grad_clip ? config.grad_clip / norm : 1.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix& g_i = grads[i];
      Matrix& v = st.velocity[i];
      for (std::size_t j = 0; j < v.size(); ++j) {
        v.data()[j] = config.momentum * v.data()[j] + clip * g_i.data()[j];
        params[i]->data()[j] -= config.learning_rate * v.data()[j];
      }
    }
    for (std::size_t l = 0; l < st.params.layers.size(); ++l) {
      const ColumnStats& batch = tape.batch_stats(fwd.batch_norms[l]);
      ColumnStats& run = st.params.layers[l].running;
      for (std::size_t j = 0; j < run.mean.size(); ++j) {
        run.mean[j] += config.bn_momentum * (batch.mean[j] - run.mean[j]);
        run.var[j] += config.bn_momentum * (batch.var[j] - run.var[j]);
      }
    }
    st.epoch = epoch;
    record(epoch, loss_value);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: "GECO", u32 version, config block, then every parameter
// (u64 rows, u64 cols, f64 data) in declaration order, then the batch-norm
// running statistics. All little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const ModelConfig& c, const ModelParams& m) {
  using detail::put_le;
  os.write("GECO", 4);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  for (std::uint64_t v : {std::uint64_t{c.layers}, std::uint64_t{c.hidden}, std::uint64_t{c.order},
                          std::uint64_t{c.pos_dim}, std::uint64_t{c.filter_hidden},
                          std::uint64_t{c.classes},
                          static_cast<std::uint64_t>(c.perm_strategy), c.seed,
                          std::uint64_t{c.epochs}, std::uint64_t{c.degree_encoding},
                          std::uint64_t{c.index_encoding_dim}, std::uint64_t{m.in_w.rows()}})
    put_le<std::uint64_t>(os, v);
  for (double v : {c.learning_rate, c.momentum, c.dropout, c.held_out_fraction, c.bn_momentum,
                    c.grad_clip})
    put_le<double>(os, v);
  for (const Matrix* p : parameter_list(m)) {
    put_le<std::uint64_t>(os, p->rows());
    put_le<std::uint64_t>(os, p->cols());
    for (double v : p->values()) put_le<double>(os, v);
  }
  for (const auto& l : m.layers)
    for (const auto* buf : {&l.running.mean, &l.running.var}) {
      put_le<std::uint64_t>(os, buf->size());
      for (double v : *buf) put_le<double>(os, v);
    }
  if (!os) throw IoError("failed writing checkpoint");
}

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

inline Checkpoint read_checkpoint(std::istream& is) {
  using detail::get_le;
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string_view(magic, 4) != "GECO") throw IoError("checkpoint: bad magic");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ModelConfig& c = ck.config;
  auto u = [&] { return get_le<std::uint64_t>(is); };
  c.layers = u();
  c.hidden = u();
  c.order = u();
  c.pos_dim = u();
  c.filter_hidden = u();
  c.classes = u();
  const auto strategy = u();
  if (strategy > 2) throw IoError("checkpoint: bad permutation strategy");
  c.perm_strategy = static_cast<PermStrategy>(strategy);
  c.seed = u();
  c.epochs = u();
  c.degree_encoding = u() != 0;
  c.index_encoding_dim = u();
  const std::size_t width = u();
  c.learning_rate = get_le<double>(is);
  c.momentum = get_le<double>(is);
  c.dropout = get_le<double>(is);
  c.held_out_fraction = get_le<double>(is);
  c.bn_momentum = get_le<double>(is);
  c.grad_clip = get_le<double>(is);
  try {
    c.validate();
  } catch (const InputError& e) {
    throw IoError(std::string("checkpoint: invalid config: ") + e.what());
  }
  if (width < encoded_width(0, c)) throw IoError("checkpoint: inconsistent input width");
  // Shapes come from a freshly initialized model; the file must agree.
  ck.params = init_model(c, width - encoded_width(0, c), 1);
  for (Matrix* p : parameter_list(ck.params)) {
    const std::size_t rows = u(), cols = u();
    if (rows != p->rows() || cols != p->cols()) throw IoError("checkpoint: parameter shape mismatch");
    for (double& v : p->values()) v = get_le<double>(is);
  }
  for (auto& l : ck.params.layers)
    for (auto* buf : {&l.running.mean, &l.running.var}) {
      if (u() != buf->size()) throw IoError("checkpoint: buffer size mismatch");
      for (double& v : *buf) v = get_le<double>(is);
    }
  return ck;
}

inline void save_checkpoint(const std::string& path, const ModelConfig& c, const ModelParams& m) {
  auto os = open_out(path, true);
  write_checkpoint(os, c, m);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto is = open_in(path, true);
  return read_checkpoint(is);
}

// ---------------------------------------------------------------------------
// Dense attention baseline

/// softmax(Q K^T / sqrt(d_k)) V with Q = x wq, K = x wk, V = x wv. Every one of
/// the N x N scores is computed; they are produced `row_tile` rows at a time so
/// the baseline runs at sizes where the full score matrix would not fit.
inline FeatureMatrix dense_attention_forward(const FeatureMatrix& x, const Matrix& wq,
                                             const Matrix& wk, const Matrix& wv,
                                             std::size_t row_tile = 64) {
  if (wq.rows() != x.cols() || wk.rows() != x.cols() || wv.rows() != x.cols() ||
      wq.cols() != wk.cols())
    throw InputError("dense_attention_forward: weight shapes inconsistent with input");
  const std::size_t n = x.rows();
  const Matrix q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, wq.cols())));
  Matrix out(n, wv.cols());
  const auto ke = as_eigen(k), ve = as_eigen(v), qe = as_eigen(q);
  auto oe = as_eigen(out);
  row_tile = std::max<std::size_t>(1, row_tile);
  EigenRowMajor s;
  for (std::size_t r0 = 0; r0 < n; r0 += row_tile) {
    const auto rows = static_cast<Eigen::Index>(std::min(row_tile, n - r0));
    const auto b = static_cast<Eigen::Index>(r0);
    s.noalias() = (qe.middleRows(b, rows) * ke.transpose()) * scale;
    const Eigen::VectorXd m = s.rowwise().maxCoeff();
    s = (s.colwise() - m).array().exp();
    const Eigen::VectorXd z = s.rowwise().sum();
    s.array().colwise() /= z.array();
    oe.middleRows(b, rows).noalias() = s * ve;
  }
  return out;
}

inline constexpr std::size_t kAttentionMatrixGuard = 4096;

/// The full attention matrix, for inspection at small N.
inline Matrix attention_weights(const FeatureMatrix& x, const Matrix& wq, const Matrix& wk) {
  if (x.rows() > kAttentionMatrixGuard)
    throw SizeError("attention_weights: N above " + std::to_string(kAttentionMatrixGuard));
  Matrix s = matmul_nt(matmul(x, wq), matmul(x, wk));
  const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, wq.cols())));
  for (double& v : s.values()) v *= scale;
  return softmax_rows(s);
}

}  // namespace geco

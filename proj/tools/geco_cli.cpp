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

// Command-line entry point: data generation, oracle sweeps, gradient checks,
// benchmarks and toy training.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "geco/bench.hpp"
#include "geco/graph.hpp"
#include "geco/io.hpp"
#include "geco/model.hpp"
#include "geco/verify.hpp"

namespace {

using namespace geco;

enum ExitCode : int { kOk = 0, kValidation = 1, kNumeric = 2, kIo = 3 };

/// Flat "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InputError(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw InputError(path + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

/// Applies config values to options of `sub` not given on the command line.
void merge_config(CLI::App& sub, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (!opt || key == "help")
      throw InputError("config: unknown key '" + key + "' for subcommand '" + sub.get_name() + "'");
    if (opt->count() > 0) continue;  // command line wins
    if (opt->get_type_size() == 0) {
      if (value == "true" || value == "1") opt->add_result("true");
      else if (value != "false" && value != "0")
        throw InputError("config: flag '" + key + "' expects true/false");
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

std::vector<std::size_t> parse_size_list(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != item.size() || item.empty() || item[0] == '-')
      throw InputError(std::string(what) + ": bad entry '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw InputError(std::string(what) + ": empty list");
  return out;
}

double parse_sparsity(const std::string& s, std::size_t n) {
  if (s == "auto") return SyntheticGraphSpec::auto_sparsity(n);
  std::size_t pos = 0;
  double p = 0.0;
  try {
    p = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != s.size()) throw InputError("--sparsity: expected a number or 'auto', got '" + s + "'");
  return p;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::size_t nodes = 1024;
  std::string sparsity = "auto";
  std::size_t features = 108;
  std::uint64_t seed = 0;
  std::string out_graph = "graph.txt";
  std::string out_feat = "features.bin";
};

int run_gen(const GenArgs& a) {
  SyntheticGraphSpec spec;
  spec.num_nodes = a.nodes;
  if (a.nodes == 0) throw InputError("--nodes must be > 0");
  spec.sparsity = parse_sparsity(a.sparsity, a.nodes);
  spec.feature_dim = a.features;
  spec.seed = a.seed;
  spec.validate();
  const GeneratedGraph g = gen_erdos_renyi(spec);
  save_graph(a.out_graph, g.graph);
  save_features(a.out_feat, g.features);
  std::printf("seed=%llu nodes=%zu sparsity=%.17g edges=%zu features=%zu\n",
              static_cast<unsigned long long>(a.seed), a.nodes, spec.sparsity,
              g.graph.num_edges(), a.features);
  std::printf("wrote %s and %s\n", a.out_graph.c_str(), a.out_feat.c_str());
  return kOk;
}

struct OracleArgs {
  std::string n_list = "1,2,3,4,7,8,16,32,64,255,256";
  std::string d_list = "1,2,4";
  std::string k_list = "1,2,3";
  std::uint64_t seed = 0;
  double tol = 1e-9;
};

int run_oracle(const OracleArgs& a) {
  const auto ns = parse_size_list(a.n_list, "--n-list");
  const auto ds = parse_size_list(a.d_list, "--d-list");
  const auto ks = parse_size_list(a.k_list, "--k-list");
  for (std::size_t n : ns) {
    if (n == 0) throw InputError("--n-list: sizes must be > 0");
    if (n > kSurrogateGuard)
      throw InputError("--n-list: " + std::to_string(n) + " above oracle guard " +
                       std::to_string(kSurrogateGuard));
  }
  for (std::size_t d : ds)
    if (d == 0) throw InputError("--d-list: widths must be > 0");
  for (std::size_t k : ks)
    if (k == 0) throw InputError("--k-list: orders must be > 0");
  if (!(a.tol >= 0.0)) throw InputError("--tol must be >= 0");
  std::printf("seed=%llu tol=%g\n", static_cast<unsigned long long>(a.seed), a.tol);
  std::size_t cases = 0, failures = 0;
  auto report = [&](const char* kind, std::size_t n, std::size_t d, std::size_t k, double err) {
    const bool ok = err < a.tol;
    ++cases;
    failures += !ok;
    if (k == 0)
      std::printf("%-4s %-9s n=%-4zu d=%-2zu        max_err=%.3e\n", ok ? "ok" : "FAIL", kind, n, d, err);
    else
      std::printf("%-4s %-9s n=%-4zu d=%-2zu k=%zu    max_err=%.3e\n", ok ? "ok" : "FAIL", kind, n, d, k, err);
  };
  for (std::size_t n : ns)
    for (std::size_t d : ds) report("conv", n, d, 0, conv_oracle_error(n, d, a.seed));
  for (std::size_t n : ns)
    for (std::size_t d : ds)
      for (std::size_t k : ks) report("surrogate", n, d, k, surrogate_oracle_error(n, d, k, a.seed));
  std::printf("%zu/%zu cases below tol\n", cases - failures, cases);
  return failures ? kNumeric : kOk;
}

struct GradcheckArgs {
  std::size_t n = 12;
  std::size_t layers = 2;
  std::size_t hidden = 8;
  std::size_t order = 2;
  double step = 1e-5;
  double tol = 1e-4;
  std::size_t coords = 64;
  std::uint64_t seed = 0;
};

int run_gradcheck(const GradcheckArgs& a) {
  if (a.n < 2 || a.n > 64) throw InputError("--n must be in [2, 64]");
  if (!(a.step > 0.0)) throw InputError("--step must be > 0");
  if (a.coords < 64) throw InputError("--coords must be >= 64");
  SbmOptions so;
  so.feature_dim = 4;
  const LabeledGraph data = gen_sbm(2, a.n / 2, 0.6, 0.1, a.seed, so);
  ModelConfig c;
  c.layers = a.layers;
  c.hidden = a.hidden;
  c.order = a.order;
  c.pos_dim = 8;
  c.filter_hidden = 16;
  c.seed = a.seed;
  c.validate();
  ModelParams m = init_model(c, so.feature_dim, data.graph.num_nodes);
  const PreparedInputs in = prepare_inputs(data.graph, data.features, c);
  std::vector<std::size_t> rows(data.graph.num_nodes);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  auto f = [&](Tape& t) {
    const TapedModel tm = record_model(t, in, c, m, {true, 1, {}});
    return t.softmax_cross_entropy(tm.logits, data.labels, rows);
  };
  GradcheckOptions opts;
  opts.step = a.step;
  opts.tol = a.tol;
  opts.min_coords = a.coords;
  opts.seed = a.seed;
  const auto params = parameter_list(m);
  const GradcheckReport r = gradcheck(params, f, opts);
  std::printf("seed=%llu n=%zu layers=%zu hidden=%zu order=%zu step=%g tol=%g\n",
              static_cast<unsigned long long>(a.seed), data.graph.num_nodes, a.layers, a.hidden,
              a.order, a.step, a.tol);
  std::printf("%-6s %-6s %14s %14s %10s\n", "param", "index", "analytic", "numeric", "rel_err");
  for (const CoordinateCheck& cc : r.coords)
    std::printf("%-6zu %-6zu %14.6e %14.6e %10.2e\n", cc.param, cc.index, cc.analytic, cc.numeric,
                cc.rel_error);
  std::printf("coordinates=%zu max_rel_error=%.3e %s\n", r.coords.size(), r.max_rel_error,
              r.passed ? "PASS" : "FAIL");
  return r.passed ? kOk : kNumeric;
}

struct BenchArgs {
  std::size_t min_log2 = 9;
  std::size_t max_log2 = 17;
  std::size_t dense_max_log2 = 17;
  std::size_t features = 108;
  std::size_t reps = 3;
  std::size_t dense_reps = 0;
  bool no_dense_warmup = false;
  std::string sparsity = "auto";
  unsigned threads = 1;
  std::uint64_t seed = 0;
  std::string out = "bench.csv";
};

int run_bench(const BenchArgs& a) {
  BenchOptions o;
  o.min_log2 = a.min_log2;
  o.max_log2 = a.max_log2;
  o.features = a.features;
  o.reps = a.reps;
  o.dense_reps = a.dense_reps;
  o.dense_warmup = !a.no_dense_warmup;
  o.seed = a.seed;
  if (a.threads == 0) throw InputError("--threads must be >= 1");
  o.policy.threads = a.threads;
  if (a.dense_max_log2 > 30) throw InputError("--dense-max-log2 above 30");
  o.dense_max_n = std::size_t{1} << a.dense_max_log2;
  if (a.sparsity != "auto") o.sparsity = parse_sparsity(a.sparsity, 1);
  o.validate();
  use_heap_for_large_allocations();
  std::printf("seed=%llu features=%zu threads=%u range=2^%zu..2^%zu reps=%zu\n",
              static_cast<unsigned long long>(a.seed), a.features, a.threads, a.min_log2,
              a.max_log2, a.reps);
  std::fflush(stdout);
  const auto rows = run_scaling(o, [](const BenchRow& r) {
    if (!r.skip_reason.empty())
      std::fprintf(stderr, "n=%zu: dense baseline skipped (%s)\n", r.n, r.skip_reason.c_str());
  });
  BenchMetadata meta;
  meta.threads = a.threads;
  meta.features = a.features;
  meta.seed = a.seed;
  emit_csv(a.out, rows, meta);
  // The table is printed from the file as written.
  auto in = open_in(a.out);
  const auto back = parse_csv(in);
  std::printf("%10s %12s %12s %10s %5s %10s\n", "n", "geco_ms", "dense_ms", "speedup", "reps", "stddev_ms");
  for (const BenchRow& r : back) {
    char dense[32] = "-", speed[32] = "-";
    if (r.dense_ms) std::snprintf(dense, sizeof dense, "%.3f", *r.dense_ms);
    if (r.speedup) std::snprintf(speed, sizeof speed, "%.3f", *r.speedup);
    std::printf("%10zu %12.3f %12s %10s %5zu %10.3f\n", r.n, r.geco_ms, dense, speed, r.reps, r.stddev_ms);
  }
  std::printf("wrote %s\n", a.out.c_str());
  std::size_t eligible = 0, measured = 0;
  for (const BenchRow& r : rows) {
    eligible += r.n <= o.dense_max_n;
    measured += r.dense_ms.has_value();
  }
  if (eligible > 0 && measured == 0) {
    std::fprintf(stderr, "no dense baseline could be measured\n");
    return kNumeric;
  }
  return kOk;
}

struct TrainArgs {
  std::string graph, feat, labels;
  std::size_t sbm_blocks = 2;
  std::size_t sbm_block_size = 100;
  double p_in = 0.1;
  double p_out = 0.01;
  std::size_t sbm_features = 8;
  ModelConfig config;
  std::string perm = "natural";
  std::string checkpoint = "checkpoint.geco";
};

std::vector<int> read_labels(const std::string& path) {
  auto in = open_in(path);
  std::vector<int> labels;
  long long v = 0;
  while (in >> v) {
    if (v < 0 || v > 1'000'000) throw InputError("labels: value out of range");
    labels.push_back(static_cast<int>(v));
  }
  if (!in.eof()) throw InputError("labels: malformed entry in " + path);
  return labels;
}

int run_train(TrainArgs a) {
  a.config.perm_strategy = parse_perm_strategy(a.perm);
  // Parsing aborts the whole command on bad input before any work is done.
  LabeledGraph data;
  if (!a.graph.empty() || !a.feat.empty() || !a.labels.empty()) {
    if (a.graph.empty() || a.feat.empty() || a.labels.empty())
      throw InputError("--graph, --feat and --labels must be given together");
    data.graph = load_graph(a.graph);
    data.features = load_features(a.feat);
    data.labels = read_labels(a.labels);
    int max_label = 0;
    for (int y : data.labels) max_label = std::max(max_label, y);
    a.config.classes = std::max<std::size_t>(a.config.classes, static_cast<std::size_t>(max_label) + 1);
  } else {
    SbmOptions so;
    so.feature_dim = a.sbm_features;
    data = gen_sbm(a.sbm_blocks, a.sbm_block_size, a.p_in, a.p_out, a.config.seed, so);
    a.config.classes = std::max<std::size_t>(2, a.sbm_blocks);
  }
  a.config.validate();
  std::printf("seed=%llu nodes=%zu edges=%zu layers=%zu hidden=%zu order=%zu perm=%s epochs=%zu lr=%g\n",
              static_cast<unsigned long long>(a.config.seed), data.graph.num_nodes,
              data.graph.num_edges(), a.config.layers, a.config.hidden, a.config.order,
              std::string(to_string(a.config.perm_strategy)).c_str(), a.config.epochs,
              a.config.learning_rate);
  std::printf("%6s %10s %8s %8s\n", "epoch", "loss", "train", "heldout");
  const TrainResult r = train(data.graph, data.features, data.labels, a.config, [](const EpochMetrics& m) {
    std::printf("%6zu %10.5f %8.4f %8.4f\n", m.epoch, m.loss, m.train_accuracy, m.heldout_accuracy);
    std::fflush(stdout);
  });
  save_checkpoint(a.checkpoint, a.config, r.state.params);
  const EpochMetrics& last = r.history.back();
  std::printf("final train=%.4f heldout=%.4f checkpoint=%s\n", last.train_accuracy,
              last.heldout_accuracy, a.checkpoint.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GECO graph operator toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "flat key=value file; command-line flags take precedence");

  GenArgs gen;
  auto* sgen = app.add_subcommand("gen", "generate an Erdos-Renyi graph and Gaussian features");
  sgen->add_option("--nodes", gen.nodes, "node count");
  sgen->add_option("--sparsity", gen.sparsity, "edge probability, or 'auto' for 10/N");
  sgen->add_option("--features", gen.features, "feature width");
  sgen->add_option("--seed", gen.seed);
  sgen->add_option("--out-graph", gen.out_graph);
  sgen->add_option("--out-feat", gen.out_feat);

  OracleArgs orc;
  auto* sorc = app.add_subcommand("oracle", "FFT-vs-direct and GCB-vs-surrogate sweeps");
  sorc->add_option("--n-list", orc.n_list, "comma-separated sizes");
  sorc->add_option("--d-list", orc.d_list, "comma-separated channel counts");
  sorc->add_option("--k-list", orc.k_list, "comma-separated orders");
  sorc->add_option("--seed", orc.seed);
  sorc->add_option("--tol", orc.tol);

  GradcheckArgs gc;
  auto* sgc = app.add_subcommand("gradcheck", "finite-difference check of a full model");
  sgc->add_option("--n", gc.n, "SBM node count (2..64)");
  sgc->add_option("--layers", gc.layers);
  sgc->add_option("--hidden", gc.hidden);
  sgc->add_option("--order", gc.order);
  sgc->add_option("--step", gc.step);
  sgc->add_option("--tol", gc.tol);
  sgc->add_option("--coords", gc.coords, "sampled coordinates (>= 64)");
  sgc->add_option("--seed", gc.seed);

  BenchArgs bench;
  auto* sbench = app.add_subcommand("bench", "GECO layer vs dense attention scaling");
  sbench->add_option("--min-log2", bench.min_log2);
  sbench->add_option("--max-log2", bench.max_log2);
  sbench->add_option("--dense-max-log2", bench.dense_max_log2, "memory guard for the dense baseline");
  sbench->add_option("--features", bench.features);
  sbench->add_option("--reps", bench.reps);
  sbench->add_option("--dense-reps", bench.dense_reps, "0 = same as --reps");
  sbench->add_flag("--no-dense-warmup", bench.no_dense_warmup);
  sbench->add_option("--sparsity", bench.sparsity, "edge probability, or 'auto' for 10/N");
  sbench->add_option("--threads", bench.threads, "channel-parallel threads inside GECO");
  sbench->add_option("--seed", bench.seed);
  sbench->add_option("--out", bench.out);

  TrainArgs tr;
  auto* str = app.add_subcommand("train", "train a node classifier");
  str->add_option("--graph", tr.graph, "graph text file");
  str->add_option("--feat", tr.feat, "feature binary file");
  str->add_option("--labels", tr.labels, "one integer label per line");
  str->add_option("--sbm-blocks", tr.sbm_blocks);
  str->add_option("--sbm-block-size", tr.sbm_block_size);
  str->add_option("--p-in", tr.p_in);
  str->add_option("--p-out", tr.p_out);
  str->add_option("--sbm-features", tr.sbm_features);
  str->add_option("--layers", tr.config.layers);
  str->add_option("--hidden", tr.config.hidden);
  str->add_option("--order", tr.config.order);
  str->add_option("--perm", tr.perm, "natural | static | dynamic");
  str->add_option("--epochs", tr.config.epochs);
  str->add_option("--lr", tr.config.learning_rate);
  str->add_option("--momentum", tr.config.momentum);
  str->add_option("--dropout", tr.config.dropout);
  str->add_option("--seed", tr.config.seed);
  str->add_option("--checkpoint", tr.checkpoint);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!config_path.empty()) merge_config(*sub, read_config_file(config_path));
    if (sub == sgen) return run_gen(gen);
    if (sub == sorc) return run_oracle(orc);
    if (sub == sgc) return run_gradcheck(gc);
    if (sub == sbench) return run_bench(bench);
    if (sub == str) return run_train(tr);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kIo;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "numeric error (epoch %zu): %s\n", e.epoch, e.what());
    return kNumeric;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return kValidation;
  } catch (const std::logic_error& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return kValidation;
  }
  return kValidation;
}

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

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "geco/core.hpp"
#include "geco/graph.hpp"

namespace geco {

namespace detail {

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(value);
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  os.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& is) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::array<unsigned char, sizeof(T)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!is) throw IoError("unexpected end of binary stream");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

// Graph text format: "N M" on the first line, then M lines "src dst [weight]"
// (0-indexed, weight defaults to 1).

inline void write_graph_text(std::ostream& os, const CsrGraph& g) {
  os << g.num_nodes << ' ' << g.num_edges() << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t v = 0; v < g.num_nodes; ++v)
    for (std::size_t e = g.row_offsets[v]; e < g.row_offsets[v + 1]; ++e) {
      os << v << ' ' << g.col_indices[e];
      if (g.values[e] != 1.0) os << ' ' << g.values[e];
      os << '\n';
    }
  if (!os) throw IoError("failed writing graph text");
}

inline CsrGraph read_graph_text(std::istream& is) {
  std::string line;
  std::size_t n = 0, m = 0;
  if (!std::getline(is, line)) throw IoError("graph text: missing header");
  {
    std::istringstream hs(line);
    if (!(hs >> n >> m)) throw InputError("graph text: malformed header");
  }
  std::vector<Edge> edges;
  edges.reserve(m);
  std::size_t lineno = 1;
  while (edges.size() < m && std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Edge e;
    if (!(ls >> e.src >> e.dst))
      throw InputError("graph text: malformed edge on line " +
                       std::to_string(lineno));
    if (!(ls >> e.weight)) e.weight = 1.0;
    edges.push_back(e);
  }
  if (edges.size() != m)
    throw InputError("graph text: expected " + std::to_string(m) +
                     " edges, found " + std::to_string(edges.size()));
  return build_csr(std::move(edges), n);
}

// Feature binary format: u64 N, u64 d, then N*d f64 row-major, all
// little-endian.

inline void write_features(std::ostream& os, const FeatureMatrix& x) {
  detail::put_le<std::uint64_t>(os, x.rows());
  detail::put_le<std::uint64_t>(os, x.cols());
  for (double v : x.values()) detail::put_le<double>(os, v);
  if (!os) throw IoError("failed writing feature binary");
}

inline FeatureMatrix read_features(std::istream& is) {
  const auto n = detail::get_le<std::uint64_t>(is);
  const auto d = detail::get_le<std::uint64_t>(is);
  if (d != 0 && n > (std::uint64_t{1} << 40) / d)
    throw InputError("feature binary: implausible shape");
  FeatureMatrix x(n, d);
  for (double& v : x.values()) v = detail::get_le<double>(is);
  if (!all_finite(x.values()))
    throw InputError("feature binary: non-finite entries");
  return x;
}

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  return os;
}

inline std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  return is;
}

inline void save_graph(const std::string& path, const CsrGraph& g) {
  auto os = open_out(path);
  write_graph_text(os, g);
}

inline CsrGraph load_graph(const std::string& path) {
  auto is = open_in(path);
  return read_graph_text(is);
}

inline void save_features(const std::string& path, const FeatureMatrix& x) {
  auto os = open_out(path, true);
  write_features(os, x);
}

inline FeatureMatrix load_features(const std::string& path) {
  auto is = open_in(path, true);
  return read_features(is);
}

}  // namespace geco

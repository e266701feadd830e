/*
   Copyright 2026 The nora-sbl Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/
#pragma once

#include <numbers>
#include <random>
#include <set>
#include <utility>

#include "nora/core.hpp"

namespace nora {

// ---------------------------------------------------------------------------
// Zadoff-Chu pilot bank
// ---------------------------------------------------------------------------

/// K pilot sequences of length Lt, stored row-major: at(k, l) is user k's
/// l-th pilot symbol.
struct PilotBank {
  int K = 0;
  int Lt = 0;
  std::vector<cplx> symbols;

  const cplx& at(int k, int l) const { return symbols[static_cast<std::size_t>(k) * Lt + l]; }
  cplx& at(int k, int l) { return symbols[static_cast<std::size_t>(k) * Lt + l]; }
};

/// Base ZC sequence of root r. Odd lengths use n(n+1), even lengths n^2.
inline std::vector<cplx> zc_sequence(int root, int length) {
  std::vector<cplx> x(static_cast<std::size_t>(length));
  for (int n = 0; n < length; ++n) {
    // reduce the quadratic index modulo 2*length before scaling to keep phases exact
    const std::int64_t q = (length % 2 == 1) ? static_cast<std::int64_t>(n) * (n + 1)
                                             : static_cast<std::int64_t>(n) * n;
    const std::int64_t m = (static_cast<std::int64_t>(root) * q) % (2 * static_cast<std::int64_t>(length));
    x[static_cast<std::size_t>(n)] = std::polar(1.0, -std::numbers::pi * static_cast<double>(m) / length);
  }
  return x;
}

/// Row k uses root 1 + k / Lt and cyclic shift k % Lt, giving (Lt-1)*Lt
/// sequences in total (one, the constant [1], when Lt = 1).
inline PilotBank gen_zc_bank(int Lt, int K) {
  if (Lt < 1 || K < 1) throw DimensionError("gen_zc_bank: Lt and K must be positive");
  const std::int64_t capacity = Lt == 1 ? 1 : static_cast<std::int64_t>(Lt - 1) * Lt;
  if (K > capacity)
    throw CapacityError("gen_zc_bank: K = " + std::to_string(K) + " exceeds (Lt-1)*Lt = " +
                        std::to_string(capacity));
  PilotBank bank{K, Lt, std::vector<cplx>(static_cast<std::size_t>(K) * Lt)};
  int cached_root = -1;
  std::vector<cplx> base;
  for (int k = 0; k < K; ++k) {
    const int root = 1 + k / Lt;
    const int shift = k % Lt;
    if (root != cached_root) {
      base = zc_sequence(root, Lt);
      cached_root = root;
    }
    for (int l = 0; l < Lt; ++l) bank.at(k, l) = base[static_cast<std::size_t>((l + shift) % Lt)];
  }
  // composite lengths can alias (root, shift) pairs
  std::set<std::vector<std::pair<double, double>>> seen;
  for (int k = 0; k < K; ++k) {
    std::vector<std::pair<double, double>> row;
    for (int l = 0; l < Lt; ++l)
      row.emplace_back(std::round(bank.at(k, l).real() * 1e9), std::round(bank.at(k, l).imag() * 1e9));
    if (!seen.insert(std::move(row)).second)
      throw CapacityError("gen_zc_bank: duplicate sequence at user " + std::to_string(k) +
                          " (choose a prime Lt)");
  }
  return bank;
}

/// Periodic correlation sum_n x[n] * conj(y[(n + lag) mod L]).
inline cplx periodic_correlation(const std::vector<cplx>& x, const std::vector<cplx>& y, int lag) {
  const int L = static_cast<int>(x.size());
  cplx acc{};
  for (int n = 0; n < L; ++n) acc += x[static_cast<std::size_t>(n)] * std::conj(y[static_cast<std::size_t>((n + lag) % L)]);
  return acc;
}

// ---------------------------------------------------------------------------
// Regular LDS spreading graph
// ---------------------------------------------------------------------------

struct LdsGraph {
  int N = 0;
  int K = 0;
  int dc = 0;
  int dr = 0;
  std::vector<std::vector<int>> user_subs;                   // [k] -> sorted subcarriers
  std::vector<std::vector<std::pair<int, int>>> sub_users;   // [m] -> (k, d) sorted by k

  /// Builds the graph from an explicit assignment and checks regularity.
  static LdsGraph from_user_subs(int N, std::vector<std::vector<int>> subs) {
    LdsGraph g;
    g.N = N;
    g.K = static_cast<int>(subs.size());
    if (g.K == 0 || N < 1) throw DimensionError("LdsGraph: empty assignment");
    g.dc = static_cast<int>(subs.front().size());
    if (g.dc < 1 || g.dc > N) throw DimensionError("LdsGraph: bad spreading degree");
    if ((static_cast<std::int64_t>(g.K) * g.dc) % N != 0)
      throw DimensionError("LdsGraph: K*dc not divisible by N");
    g.dr = g.K * g.dc / N;
    g.sub_users.assign(static_cast<std::size_t>(N), {});
    for (int k = 0; k < g.K; ++k) {
      auto& s = subs[static_cast<std::size_t>(k)];
      if (static_cast<int>(s.size()) != g.dc) throw DimensionError("LdsGraph: irregular user degree");
      std::sort(s.begin(), s.end());
      if (std::adjacent_find(s.begin(), s.end()) != s.end())
        throw ConstructionError("LdsGraph: user " + std::to_string(k) + " repeats a subcarrier");
      for (int d = 0; d < g.dc; ++d) {
        const int m = s[static_cast<std::size_t>(d)];
        if (m < 0 || m >= N) throw DimensionError("LdsGraph: subcarrier index out of range");
        g.sub_users[static_cast<std::size_t>(m)].emplace_back(k, d);
      }
    }
    for (int m = 0; m < N; ++m)
      if (static_cast<int>(g.sub_users[static_cast<std::size_t>(m)].size()) != g.dr)
        throw DimensionError("LdsGraph: irregular subcarrier degree at " + std::to_string(m));
    g.user_subs = std::move(subs);
    return g;
  }

  /// One line per user: `k: m_1 m_2 ... m_dc`.
  std::string to_text() const {
    std::ostringstream out;
    for (int k = 0; k < K; ++k) {
      out << k << ':';
      for (int m : user_subs[static_cast<std::size_t>(k)]) out << ' ' << m;
      out << '\n';
    }
    return out.str();
  }

  static LdsGraph from_text(int N, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::vector<int>> subs;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      auto colon = line.find(':');
      if (colon == std::string::npos) throw FormatError("graph text: missing ':'");
      if (std::stoi(line.substr(0, colon)) != static_cast<int>(subs.size()))
        throw FormatError("graph text: users out of order");
      std::istringstream row(line.substr(colon + 1));
      std::vector<int> s;
      for (int m; row >> m;) s.push_back(m);
      subs.push_back(std::move(s));
    }
    return from_user_subs(N, std::move(subs));
  }
};

/// Edge-interleaver construction: user stubs are paired with a shuffled list
/// of subcarrier stubs (each subcarrier repeated dr times). Pairings where a
/// user lands twice on one subcarrier are repaired by degree-preserving stub
/// swaps with other users.
inline LdsGraph build_lds_graph(int N, int K, int dc, std::uint64_t graph_seed) {
  if (N < 1 || K < 1 || dc < 1 || dc > N) throw DimensionError("build_lds_graph: bad dimensions");
  if ((static_cast<std::int64_t>(K) * dc) % N != 0)
    throw DimensionError("build_lds_graph: K*dc = " + std::to_string(static_cast<std::int64_t>(K) * dc) +
                         " not divisible by N = " + std::to_string(N));
  const int dr = K * dc / N;
  const std::size_t stubs = static_cast<std::size_t>(K) * dc;
  std::mt19937_64 rng(graph_seed);

  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<int> sub_of(stubs);  // stub i belongs to user i / dc
    for (int m = 0; m < N; ++m)
      for (int r = 0; r < dr; ++r) sub_of[static_cast<std::size_t>(m) * dr + r] = m;
    std::shuffle(sub_of.begin(), sub_of.end(), rng);

    auto user_has = [&](int k, int m, std::size_t skip) {
      for (int d = 0; d < dc; ++d) {
        const std::size_t i = static_cast<std::size_t>(k) * dc + d;
        if (i != skip && sub_of[i] == m) return true;
      }
      return false;
    };
    std::uniform_int_distribution<std::size_t> pick(0, stubs - 1);
    bool ok = true;
    for (std::size_t i = 0; i < stubs && ok; ++i) {
      const int k = static_cast<int>(i / dc);
      if (!user_has(k, sub_of[i], i)) continue;
      // swap with a random stub of another user where both sides stay simple
      bool fixed = false;
      for (int tries = 0; tries < 64 * static_cast<int>(stubs) && !fixed; ++tries) {
        const std::size_t j = pick(rng);
        const int k2 = static_cast<int>(j / dc);
        if (k2 == k || sub_of[j] == sub_of[i]) continue;
        if (user_has(k, sub_of[j], i) || user_has(k2, sub_of[i], j)) continue;
        std::swap(sub_of[i], sub_of[j]);
        fixed = true;
      }
      ok = fixed;
    }
    if (!ok) continue;

    std::vector<std::vector<int>> subs(static_cast<std::size_t>(K));
    for (std::size_t i = 0; i < stubs; ++i) subs[i / dc].push_back(sub_of[i]);
    return LdsGraph::from_user_subs(N, std::move(subs));
  }
  throw ConstructionError("build_lds_graph: no simple regular graph after " + std::to_string(kMaxAttempts) +
                          " attempts");
}

// ---------------------------------------------------------------------------
// Reduced pilot matrix
// ---------------------------------------------------------------------------

/// Sparse (N*Lt) x (K*dc) matrix with one stored entry per factor-graph edge.
///
/// Observation n = l*N + m is pilot symbol l on subcarrier m (vec of the
/// transposed pilot block). Variable j = k*dc + d is user k's d-th occupied
/// subcarrier. Edges are enumerated variable-major: e = j*Lt + l, so the Lt
/// edges of a variable are contiguous; `obs_edges` lists the dr edges of each
/// observation ordered by user.
struct ExpandedPilot {
  int K = 0, N = 0, Lt = 0, dc = 0, dr = 0;
  std::vector<cplx> value;        // [e]
  std::vector<double> power;      // [e] |value|^2
  std::vector<int> edge_obs;      // [e]
  std::vector<int> edge_var;      // [e]
  std::vector<int> obs_edges;     // [n*dr + i]

  int num_obs() const { return N * Lt; }
  int num_vars() const { return K * dc; }
  std::size_t num_edges() const { return value.size(); }
  std::size_t var_edge(int j, int l) const { return static_cast<std::size_t>(j) * Lt + l; }

  /// Dense copy; rows are observations.
  std::vector<std::vector<cplx>> dense() const {
    std::vector<std::vector<cplx>> D(static_cast<std::size_t>(num_obs()),
                                     std::vector<cplx>(static_cast<std::size_t>(num_vars())));
    for (std::size_t e = 0; e < num_edges(); ++e)
      D[static_cast<std::size_t>(edge_obs[e])][static_cast<std::size_t>(edge_var[e])] = value[e];
    return D;
  }

  /// y = Pbar * h
  std::vector<cplx> apply(const std::vector<cplx>& h) const {
    if (static_cast<int>(h.size()) != num_vars()) throw DimensionError("ExpandedPilot::apply: size mismatch");
    std::vector<cplx> y(static_cast<std::size_t>(num_obs()));
    for (int n = 0; n < num_obs(); ++n) {
      cplx acc{};
      for (int i = 0; i < dr; ++i) {
        const auto e = static_cast<std::size_t>(obs_edges[static_cast<std::size_t>(n) * dr + i]);
        acc += value[e] * h[static_cast<std::size_t>(edge_var[e])];
      }
      y[static_cast<std::size_t>(n)] = acc;
    }
    return y;
  }
};

inline ExpandedPilot assemble_expanded_pilot(const PilotBank& bank, const LdsGraph& graph) {
  if (bank.K != graph.K) throw DimensionError("assemble_expanded_pilot: bank and graph disagree on K");
  ExpandedPilot P;
  P.K = graph.K;
  P.N = graph.N;
  P.Lt = bank.Lt;
  P.dc = graph.dc;
  P.dr = graph.dr;
  const std::size_t E = static_cast<std::size_t>(P.Lt) * P.dc * P.K;
  P.value.resize(E);
  P.power.resize(E);
  P.edge_obs.resize(E);
  P.edge_var.resize(E);
  for (int k = 0; k < P.K; ++k)
    for (int d = 0; d < P.dc; ++d) {
      const int j = k * P.dc + d;
      const int m = graph.user_subs[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)];
      for (int l = 0; l < P.Lt; ++l) {
        const std::size_t e = P.var_edge(j, l);
        P.value[e] = bank.at(k, l);
        P.power[e] = std::norm(P.value[e]);
        P.edge_obs[e] = l * P.N + m;
        P.edge_var[e] = j;
      }
    }
  P.obs_edges.resize(static_cast<std::size_t>(P.num_obs()) * P.dr);
  for (int l = 0; l < P.Lt; ++l)
    for (int m = 0; m < P.N; ++m) {
      const int n = l * P.N + m;
      const auto& users = graph.sub_users[static_cast<std::size_t>(m)];
      for (int i = 0; i < P.dr; ++i) {
        const auto [k, d] = users[static_cast<std::size_t>(i)];
        P.obs_edges[static_cast<std::size_t>(n) * P.dr + i] = static_cast<int>(P.var_edge(k * P.dc + d, l));
      }
    }
  return P;
}

/// Graph, pilot bank and reduced pilot matrix of one configuration.
struct Topology {
  LdsGraph graph;
  PilotBank bank;
  ExpandedPilot pilot;
};

inline Topology make_topology(const SystemConfig& cfg) {
  validate_config(cfg);
  Topology t;
  t.graph = build_lds_graph(cfg.N, cfg.K, cfg.dc, cfg.graph_seed);
  t.bank = gen_zc_bank(cfg.Lt, cfg.K);
  t.pilot = assemble_expanded_pilot(t.bank, t.graph);
  return t;
}

}  // namespace nora

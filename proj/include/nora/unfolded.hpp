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

#include "nora/mp_bsbl.hpp"
#include "nora/weights.hpp"

namespace nora {

/// Everything one iteration block computes, kept for the backward pass.
///
/// Floored quantities keep their pre-floor value (`*_raw`) so the reverse
/// sweep can tell whether a floor was active.
struct BlockCache {
  // block inputs (previous block outputs or the initial state)
  double lambda_in = 0.0;
  std::vector<double> v_dz_in;
  std::vector<cplx> m_dz_in;
  std::vector<cplx> m_h_in;
  std::vector<double> gamma_in;

  // layer 2, per edge
  std::vector<double> d_A1v_raw, d_A1v, O_A1v;
  std::vector<cplx> num_A1m;
  std::vector<double> d_A1m_raw, d_A1m;
  std::vector<cplx> O_A1m;
  // layer 3, per variable
  std::vector<double> s_Q, inv_Q, v_Q;
  std::vector<cplx> t_Q, m_Q;
  // layer 4, per variable
  std::vector<double> p_h, inv_h, v_h, d_mh;
  std::vector<cplx> m_h;
  // layer 5, per user
  std::vector<double> d_gamma_raw, gamma;
  // layer 6, per edge
  std::vector<double> O_A2v;
  std::vector<cplx> O_A2m;
  // layer 7, per observation
  std::vector<double> v_dz_raw, v_dz;
  std::vector<cplx> num_D;
  std::vector<double> d_D_raw, d_D;
  std::vector<cplx> m_dz;
  // layer 8, per observation
  std::vector<double> p_z, inv_z, v_z;
  std::vector<cplx> u_z, m_z;
  // layer 9
  std::vector<cplx> r_lam;
  double s_lam = 0.0;
  double lambda_raw = 0.0;
  double lambda = 0.0;

  /// Output lengths of layers 1..9.
  std::array<std::int64_t, 9> layer_lengths() const {
    return {static_cast<std::int64_t>(v_dz_in.size()), static_cast<std::int64_t>(O_A1v.size()),
            static_cast<std::int64_t>(v_Q.size()),     static_cast<std::int64_t>(v_h.size()),
            static_cast<std::int64_t>(gamma.size()),   static_cast<std::int64_t>(O_A2v.size()),
            static_cast<std::int64_t>(v_dz.size()),    static_cast<std::int64_t>(v_z.size()),
            1};
  }

  MessageState to_state() const {
    MessageState s;
    s.v_dz = v_dz;
    s.m_dz = m_dz;
    s.v_Q = v_Q;
    s.m_Q = m_Q;
    s.v_h = v_h;
    s.m_h = m_h;
    s.gamma = gamma;
    s.lambda = lambda;
    s.v_z = v_z;
    s.m_z = m_z;
    return s;
  }
};

struct ForwardCache {
  MessageState init;
  std::vector<BlockCache> blocks;
  std::vector<cplx> y;
  std::uint64_t weights_checksum = 0;

  // final soft outputs
  std::vector<cplx> m_h;
  std::vector<double> gamma;
  double lambda = 0.0;
};

/// One weighted iteration block (layers 2..9). Reads lambda, gamma, the
/// delta->z messages and m_h from `prev`.
inline BlockCache forward_block(const MessageState& prev, std::span<const cplx> y, const ExpandedPilot& P,
                                const BlockWeights& W, const SystemConfig& cfg) {
  using detail::floor_at;
  const auto n_obs = static_cast<std::size_t>(P.num_obs());
  const auto n_var = static_cast<std::size_t>(P.num_vars());
  const std::size_t E = P.num_edges();
  if (y.size() != n_obs || prev.v_dz.size() != n_obs || prev.m_dz.size() != n_obs || prev.m_h.size() != n_var ||
      prev.gamma.size() != static_cast<std::size_t>(P.K))
    throw DimensionError("forward_block: inconsistent dimensions");
  for (std::size_t i = 0; i < kNumWeights; ++i)
    if (W.w[i].size() != WeightDims::of(P).count(kWeightInfo[i].kind))
      throw DimensionError("forward_block: weights do not match the pilot matrix");
  const double eps = cfg.eps_v;

  BlockCache c;
  c.lambda_in = prev.lambda;
  c.v_dz_in = prev.v_dz;
  c.m_dz_in = prev.m_dz;
  c.m_h_in = prev.m_h;
  c.gamma_in = prev.gamma;
  const double lam = prev.lambda;
  const double invlam = 1.0 / lam;

  // layer 2
  c.d_A1v_raw.resize(E);
  c.d_A1v.resize(E);
  c.O_A1v.resize(E);
  c.num_A1m.resize(E);
  c.d_A1m_raw.resize(E);
  c.d_A1m.resize(E);
  c.O_A1m.resize(E);
  for (std::size_t e = 0; e < E; ++e) {
    const auto n = static_cast<std::size_t>(P.edge_obs[e]);
    c.d_A1v_raw[e] = invlam * W[kLamToA1v][e] + prev.v_dz[n] * W[kVdToA1v][e];
    c.d_A1v[e] = floor_at(c.d_A1v_raw[e], eps);
    c.O_A1v[e] = P.power[e] / c.d_A1v[e];
    c.num_A1m[e] = y[n] * W[kYToA1m][e] - prev.m_dz[n] * W[kMdToA1m][e];
    c.d_A1m_raw[e] = invlam * W[kLamToA1m][e] + prev.v_dz[n] * W[kVdToA1m][e];
    c.d_A1m[e] = floor_at(c.d_A1m_raw[e], eps);
    c.O_A1m[e] = std::conj(P.value[e]) * c.num_A1m[e] / c.d_A1m[e];
  }

  // layers 3 and 4
  c.s_Q.resize(n_var);
  c.inv_Q.resize(n_var);
  c.v_Q.resize(n_var);
  c.t_Q.resize(n_var);
  c.m_Q.resize(n_var);
  c.p_h.resize(n_var);
  c.inv_h.resize(n_var);
  c.v_h.resize(n_var);
  c.d_mh.resize(n_var);
  c.m_h.resize(n_var);
  for (std::size_t j = 0; j < n_var; ++j) {
    double s = 0.0;
    cplx t{};
    for (int l = 0; l < P.Lt; ++l) {
      const std::size_t e = P.var_edge(static_cast<int>(j), l);
      s += c.O_A1v[e] * W[kA1vToVq][e];
      t += c.O_A1m[e] * W[kA1mToMq][e];
    }
    c.s_Q[j] = s;
    c.inv_Q[j] = 1.0 / floor_at(s, eps);
    c.v_Q[j] = floor_at(c.inv_Q[j], eps);
    c.t_Q[j] = t;
    c.m_Q[j] = c.v_Q[j] * t + prev.m_h[j] * W[kHToQ][j];

    const double g = prev.gamma[j / static_cast<std::size_t>(P.dc)];
    c.p_h[j] = 1.0 / c.v_Q[j] + g * W[kGamma][j];
    c.inv_h[j] = 1.0 / floor_at(c.p_h[j], eps);
    c.v_h[j] = floor_at(c.inv_h[j], eps);
    c.d_mh[j] = W[kOneToH][j] + c.v_Q[j] * g * W[kVGammaToH][j];
    c.m_h[j] = c.m_Q[j] / c.d_mh[j];
  }

  // layer 5
  c.d_gamma_raw.resize(static_cast<std::size_t>(P.K));
  c.gamma.resize(static_cast<std::size_t>(P.K));
  const double gamma_num = cfg.a + static_cast<double>(P.dc) + 1.0;
  for (int k = 0; k < P.K; ++k) {
    double sm = 0.0, sv = 0.0;
    for (int d = 0; d < P.dc; ++d) {
      const auto j = static_cast<std::size_t>(k) * P.dc + d;
      sm += std::norm(c.m_h[j]) * W[kMhToGamma][j];
    }
    for (int d = 0; d < P.dc; ++d) {
      const auto j = static_cast<std::size_t>(k) * P.dc + d;
      sv += c.v_h[j] * W[kVhToGamma][j];
    }
    c.d_gamma_raw[k] = cfg.b + sm + sv;
    c.gamma[k] = gamma_num / floor_at(c.d_gamma_raw[k], eps);
  }

  // layer 6
  c.O_A2v.resize(E);
  c.O_A2m.resize(E);
  for (std::size_t e = 0; e < E; ++e) {
    const auto j = static_cast<std::size_t>(P.edge_var[e]);
    c.O_A2v[e] = P.power[e] * c.v_h[j];
    c.O_A2m[e] = P.value[e] * c.m_h[j];
  }

  // layers 7, 8, 9
  c.v_dz_raw.resize(n_obs);
  c.v_dz.resize(n_obs);
  c.num_D.resize(n_obs);
  c.d_D_raw.resize(n_obs);
  c.d_D.resize(n_obs);
  c.m_dz.resize(n_obs);
  c.p_z.resize(n_obs);
  c.inv_z.resize(n_obs);
  c.v_z.resize(n_obs);
  c.u_z.resize(n_obs);
  c.m_z.resize(n_obs);
  c.r_lam.resize(n_obs);
  double sq = 0.0, sv = 0.0;
  for (std::size_t n = 0; n < n_obs; ++n) {
    double v = 0.0;
    cplx m{};
    for (int i = 0; i < P.dr; ++i) {
      const auto e = static_cast<std::size_t>(P.obs_edges[n * P.dr + i]);
      v += c.O_A2v[e] * W[kA2vToVd][e];
      m += c.O_A2m[e] * W[kA2mToMd][e];
    }
    c.v_dz_raw[n] = v;
    c.v_dz[n] = floor_at(v, eps);
    c.num_D[n] = y[n] * W[kYToD][n] - prev.m_dz[n] * W[kMdToMd][n];
    c.d_D_raw[n] = invlam * W[kLamToD][n] + prev.v_dz[n] * W[kVdToMd][n];
    c.d_D[n] = floor_at(c.d_D_raw[n], eps);
    c.m_dz[n] = m - c.v_dz[n] * (c.num_D[n] / c.d_D[n]);

    c.p_z[n] = lam * W[kLamToZ][n] + (1.0 / c.v_dz[n]) * W[kVdToVz][n];
    c.inv_z[n] = 1.0 / floor_at(c.p_z[n], eps);
    c.v_z[n] = floor_at(c.inv_z[n], eps);
    c.u_z[n] = (y[n] * lam) * W[kYLamToZ][n] + (c.m_dz[n] / c.v_dz[n]) * W[kMvToZ][n];
    c.m_z[n] = c.v_z[n] * c.u_z[n];

    c.r_lam[n] = c.m_z[n] * W[kMzToLam][n] - y[n] * W[kYToLam][n];
    sq += std::norm(c.r_lam[n]);
    sv += c.v_z[n] * W[kVzToLam][n];
  }
  c.s_lam = sq + sv;
  c.lambda_raw = static_cast<double>(n_obs) / floor_at(c.s_lam, eps);
  c.lambda = detail::clamp_lambda(c.lambda_raw);

  const bool ok = std::isfinite(c.lambda) && std::isfinite(c.lambda_raw) && detail::all_finite(c.v_Q) &&
                  detail::all_finite(c.m_Q) && detail::all_finite(c.v_h) && detail::all_finite(c.m_h) &&
                  detail::all_finite(c.gamma) && detail::all_finite(c.v_dz) && detail::all_finite(c.m_dz) &&
                  detail::all_finite(c.v_z) && detail::all_finite(c.m_z);
  if (!ok) throw NumericalError("forward_block: non-finite layer output");
  return c;
}

/// Runs every block of `weights` from the initial state.
inline ForwardCache forward(std::span<const cplx> y, const ExpandedPilot& P, const WeightSet& weights,
                            const SystemConfig& cfg) {
  ForwardCache fc;
  fc.init = init_state(cfg);
  fc.y.assign(y.begin(), y.end());
  fc.weights_checksum = weights_checksum(weights);
  fc.blocks.reserve(static_cast<std::size_t>(weights.num_blocks()));
  MessageState state = fc.init;
  for (int l = 0; l < weights.num_blocks(); ++l) {
    fc.blocks.push_back(forward_block(state, y, P, weights.block(l), cfg));
    state = fc.blocks.back().to_state();
  }
  fc.m_h = state.m_h;
  fc.gamma = state.gamma;
  fc.lambda = state.lambda;
  return fc;
}

inline Estimate infer(std::span<const cplx> y, const ExpandedPilot& P, const WeightSet& weights,
                      const SystemConfig& cfg) {
  const ForwardCache fc = forward(y, P, weights, cfg);
  return decide(fc.m_h, fc.gamma, cfg);
}

}  // namespace nora

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

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <optional>

#include "nora/metrics.hpp"
#include "nora/scenario.hpp"
#include "nora/unfolded.hpp"

namespace nora {

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

namespace detail {

// Re(conj(a) * b): contraction of a complex adjoint with a complex partial.
inline double re_dot(cplx a, cplx b) { return a.real() * b.real() + a.imag() * b.imag(); }

/// Adjoints of one block's outputs (equivalently the next block's inputs).
struct BlockAdjoint {
  double lambda = 0.0;
  std::vector<double> gamma;
  std::vector<double> v_dz;
  std::vector<cplx> m_dz;
  std::vector<cplx> m_h;
};

/// Reverse sweep through layers 9..2 of one block. Accumulates weight
/// gradients into G and returns the adjoints of the block inputs.
///
/// Complex adjoints hold dL/dRe + i dL/dIm. Floors and the lambda clamp pass
/// the adjoint through when inactive and block it when active.
inline BlockAdjoint backward_block(const BlockCache& c, const BlockAdjoint& out, std::span<const cplx> y,
                                   const ExpandedPilot& P, const BlockWeights& W, BlockWeights& G,
                                   const SystemConfig& cfg) {
  const auto n_obs = static_cast<std::size_t>(P.num_obs());
  const auto n_var = static_cast<std::size_t>(P.num_vars());
  const auto K = static_cast<std::size_t>(P.K);
  const std::size_t E = P.num_edges();
  const auto dc = static_cast<std::size_t>(P.dc);
  const double eps = cfg.eps_v;
  const double lam = c.lambda_in;
  const double invlam = 1.0 / lam;

  BlockAdjoint in;
  in.gamma.assign(K, 0.0);
  in.v_dz.assign(n_obs, 0.0);
  in.m_dz.assign(n_obs, cplx{});
  in.m_h.assign(n_var, cplx{});
  double g_lam = 0.0;     // adjoint of lambda_in used directly
  double g_invlam = 0.0;  // adjoint of 1/lambda_in

  // layer 9
  double g_s = 0.0;
  if (c.lambda_raw >= kLambdaMin && c.lambda_raw <= kLambdaMax && c.s_lam >= eps)
    g_s = -out.lambda * c.lambda_raw / c.s_lam;

  std::vector<double> g_vdz(out.v_dz);
  std::vector<cplx> g_mdz(out.m_dz);
  for (std::size_t n = 0; n < n_obs; ++n) {
    const cplx g_r = 2.0 * g_s * c.r_lam[n];
    G[kMzToLam][n] += re_dot(g_r, c.m_z[n]);
    G[kYToLam][n] -= re_dot(g_r, y[n]);
    const cplx g_mz = W[kMzToLam][n] * g_r;
    double g_vz = g_s * W[kVzToLam][n];
    G[kVzToLam][n] += g_s * c.v_z[n];

    // layer 8
    g_vz += re_dot(g_mz, c.u_z[n]);
    const cplx g_u = c.v_z[n] * g_mz;
    const cplx ylam = y[n] * lam;
    G[kYLamToZ][n] += re_dot(g_u, ylam);
    g_lam += re_dot(g_u, y[n]) * W[kYLamToZ][n];
    const cplx q = c.m_dz[n] / c.v_dz[n];
    G[kMvToZ][n] += re_dot(g_u, q);
    const cplx g_q = W[kMvToZ][n] * g_u;
    g_mdz[n] += g_q / c.v_dz[n];
    g_vdz[n] -= re_dot(g_q, c.m_dz[n]) / (c.v_dz[n] * c.v_dz[n]);

    const double g_inv = c.inv_z[n] >= eps ? g_vz : 0.0;
    const double g_pz = c.p_z[n] >= eps ? -g_inv * c.inv_z[n] * c.inv_z[n] : 0.0;
    g_lam += g_pz * W[kLamToZ][n];
    G[kLamToZ][n] += g_pz * lam;
    G[kVdToVz][n] += g_pz / c.v_dz[n];
    g_vdz[n] -= g_pz * W[kVdToVz][n] / (c.v_dz[n] * c.v_dz[n]);
  }

  // layer 7
  std::vector<double> g_OA2v(E, 0.0);
  std::vector<cplx> g_OA2m(E);
  for (std::size_t n = 0; n < n_obs; ++n) {
    const cplx g_msum = g_mdz[n];
    const cplx cq = c.num_D[n] / c.d_D[n];
    g_vdz[n] -= re_dot(g_mdz[n], cq);
    const cplx g_cq = -c.v_dz[n] * g_mdz[n];
    const cplx g_num = g_cq / c.d_D[n];
    const double g_d = c.d_D_raw[n] >= eps ? -re_dot(g_cq, cq) / c.d_D[n] : 0.0;
    g_invlam += g_d * W[kLamToD][n];
    G[kLamToD][n] += g_d * invlam;
    in.v_dz[n] += g_d * W[kVdToMd][n];
    G[kVdToMd][n] += g_d * c.v_dz_in[n];
    G[kYToD][n] += re_dot(g_num, y[n]);
    G[kMdToMd][n] -= re_dot(g_num, c.m_dz_in[n]);
    in.m_dz[n] -= W[kMdToMd][n] * g_num;

    const double g_vraw = c.v_dz_raw[n] >= eps ? g_vdz[n] : 0.0;
    for (int i = 0; i < P.dr; ++i) {
      const auto e = static_cast<std::size_t>(P.obs_edges[n * P.dr + i]);
      g_OA2v[e] = g_vraw * W[kA2vToVd][e];
      G[kA2vToVd][e] += g_vraw * c.O_A2v[e];
      g_OA2m[e] = W[kA2mToMd][e] * g_msum;
      G[kA2mToMd][e] += re_dot(g_msum, c.O_A2m[e]);
    }
  }

  // layer 6
  std::vector<double> g_vh(n_var, 0.0);
  std::vector<cplx> g_mh(out.m_h);
  for (std::size_t e = 0; e < E; ++e) {
    const auto j = static_cast<std::size_t>(P.edge_var[e]);
    g_vh[j] += P.power[e] * g_OA2v[e];
    g_mh[j] += std::conj(P.value[e]) * g_OA2m[e];
  }

  // layer 5
  for (std::size_t k = 0; k < K; ++k) {
    if (c.d_gamma_raw[k] < eps) continue;
    const double g_d = -out.gamma[k] * c.gamma[k] / c.d_gamma_raw[k];
    for (std::size_t d = 0; d < dc; ++d) {
      const std::size_t j = k * dc + d;
      g_mh[j] += 2.0 * g_d * W[kMhToGamma][j] * c.m_h[j];
      G[kMhToGamma][j] += g_d * std::norm(c.m_h[j]);
      g_vh[j] += g_d * W[kVhToGamma][j];
      G[kVhToGamma][j] += g_d * c.v_h[j];
    }
  }

  // layers 4 and 3
  std::vector<double> g_OA1v(E, 0.0);
  std::vector<cplx> g_OA1m(E);
  for (std::size_t j = 0; j < n_var; ++j) {
    const std::size_t k = j / dc;
    const double g = c.gamma_in[k];

    const cplx g_mQ = g_mh[j] / c.d_mh[j];
    const double g_dmh = -re_dot(g_mh[j], c.m_h[j]) / c.d_mh[j];
    double g_vQ = 0.0;
    G[kOneToH][j] += g_dmh;
    g_vQ += g_dmh * g * W[kVGammaToH][j];
    in.gamma[k] += g_dmh * c.v_Q[j] * W[kVGammaToH][j];
    G[kVGammaToH][j] += g_dmh * c.v_Q[j] * g;

    const double g_invh = c.inv_h[j] >= eps ? g_vh[j] : 0.0;
    const double g_ph = c.p_h[j] >= eps ? -g_invh * c.inv_h[j] * c.inv_h[j] : 0.0;
    g_vQ -= g_ph / (c.v_Q[j] * c.v_Q[j]);
    in.gamma[k] += g_ph * W[kGamma][j];
    G[kGamma][j] += g_ph * g;

    g_vQ += re_dot(g_mQ, c.t_Q[j]);
    const cplx g_tQ = c.v_Q[j] * g_mQ;
    in.m_h[j] += W[kHToQ][j] * g_mQ;
    G[kHToQ][j] += re_dot(g_mQ, c.m_h_in[j]);

    const double g_invQ = c.inv_Q[j] >= eps ? g_vQ : 0.0;
    const double g_sQ = c.s_Q[j] >= eps ? -g_invQ * c.inv_Q[j] * c.inv_Q[j] : 0.0;
    for (int l = 0; l < P.Lt; ++l) {
      const std::size_t e = P.var_edge(static_cast<int>(j), l);
      g_OA1v[e] = g_sQ * W[kA1vToVq][e];
      G[kA1vToVq][e] += g_sQ * c.O_A1v[e];
      g_OA1m[e] = W[kA1mToMq][e] * g_tQ;
      G[kA1mToMq][e] += re_dot(g_tQ, c.O_A1m[e]);
    }
  }

  // layer 2
  for (std::size_t e = 0; e < E; ++e) {
    const auto n = static_cast<std::size_t>(P.edge_obs[e]);
    const double g_dv = c.d_A1v_raw[e] >= eps ? -g_OA1v[e] * c.O_A1v[e] / c.d_A1v[e] : 0.0;
    g_invlam += g_dv * W[kLamToA1v][e];
    G[kLamToA1v][e] += g_dv * invlam;
    in.v_dz[n] += g_dv * W[kVdToA1v][e];
    G[kVdToA1v][e] += g_dv * c.v_dz_in[n];

    const cplx g_num = P.value[e] * g_OA1m[e] / c.d_A1m[e];
    const double g_dm = c.d_A1m_raw[e] >= eps ? -re_dot(g_OA1m[e], c.O_A1m[e]) / c.d_A1m[e] : 0.0;
    g_invlam += g_dm * W[kLamToA1m][e];
    G[kLamToA1m][e] += g_dm * invlam;
    in.v_dz[n] += g_dm * W[kVdToA1m][e];
    G[kVdToA1m][e] += g_dm * c.v_dz_in[n];
    G[kYToA1m][e] += re_dot(g_num, y[n]);
    G[kMdToA1m][e] -= re_dot(g_num, c.m_dz_in[n]);
    in.m_dz[n] -= W[kMdToA1m][e] * g_num;
  }

  in.lambda = g_lam - g_invlam * invlam * invlam;
  return in;
}

}  // namespace detail

/// Gradient of loss_mse(m_h, h_bar) with respect to every weight.
inline GradSet backward(const ForwardCache& cache, const WeightSet& weights, const Scenario& scenario,
                        const ExpandedPilot& P, const SystemConfig& cfg) {
  if (static_cast<int>(cache.blocks.size()) != weights.num_blocks() ||
      cache.weights_checksum != weights_checksum(weights))
    throw CacheMismatchError("backward: cache was produced with different weights");
  if (cache.y != scenario.y) throw CacheMismatchError("backward: cache was produced for a different observation");
  if (scenario.h_bar.size() != cache.m_h.size()) throw DimensionError("backward: channel length mismatch");

  GradSet grad(weights.dims(), weights.num_blocks(), 0.0);
  detail::BlockAdjoint adj;
  adj.gamma.assign(static_cast<std::size_t>(P.K), 0.0);
  adj.v_dz.assign(static_cast<std::size_t>(P.num_obs()), 0.0);
  adj.m_dz.assign(static_cast<std::size_t>(P.num_obs()), cplx{});
  adj.m_h.resize(cache.m_h.size());
  for (std::size_t j = 0; j < cache.m_h.size(); ++j) adj.m_h[j] = 2.0 * (cache.m_h[j] - scenario.h_bar[j]);

  for (int l = weights.num_blocks() - 1; l >= 0; --l)
    adj = detail::backward_block(cache.blocks[static_cast<std::size_t>(l)], adj, cache.y, P, weights.block(l),
                                 grad.block(l), cfg);
  return grad;
}

/// Loss and gradient for one sample.
inline std::pair<double, GradSet> loss_and_grad(const Scenario& s, const ExpandedPilot& P, const WeightSet& weights,
                                                const SystemConfig& cfg) {
  const ForwardCache fc = forward(s.y, P, weights, cfg);
  return {loss_mse(fc.m_h, s.h_bar), backward(fc, weights, s, P, cfg)};
}

/// Kahan-compensated running sum of gradients.
class GradAccumulator {
 public:
  explicit GradAccumulator(const WeightSet& shape)
      : sum_(shape.dims(), shape.num_blocks(), 0.0), comp_(shape.dims(), shape.num_blocks(), 0.0) {}

  void add(const GradSet& g) {
    std::vector<const std::vector<double>*> src;
    g.for_each_array([&src](const std::vector<double>& v) { src.push_back(&v); });
    std::vector<std::vector<double>*> comp;
    comp_.for_each_array([&comp](std::vector<double>& v) { comp.push_back(&v); });
    std::size_t a = 0;
    sum_.for_each_array([&](std::vector<double>& s) {
      const auto& gv = *src[a];
      auto& cv = *comp[a];
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double yv = gv[i] - cv[i];
        const double t = s[i] + yv;
        cv[i] = (t - s[i]) - yv;
        s[i] = t;
      }
      ++a;
    });
  }

  GradSet mean(std::size_t count) const {
    GradSet m = sum_;
    const double inv = 1.0 / static_cast<double>(count);
    m.for_each_array([inv](std::vector<double>& v) {
      for (auto& x : v) x *= inv;
    });
    return m;
  }

 private:
  GradSet sum_;
  GradSet comp_;
};

/// Mean loss and mean gradient over a batch.
inline std::pair<double, GradSet> batch_loss_and_grad(std::span<const Scenario* const> batch, const ExpandedPilot& P,
                                                      const WeightSet& weights, const SystemConfig& cfg) {
  if (batch.empty()) throw DimensionError("batch_loss_and_grad: empty batch");
  GradAccumulator acc(weights);
  double loss = 0.0;
  for (const Scenario* s : batch) {
    auto [l, g] = loss_and_grad(*s, P, weights, cfg);
    loss += l;
    acc.add(g);
  }
  return {loss / static_cast<double>(batch.size()), acc.mean(batch.size())};
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckOptions {
  int trials = 10;
  std::size_t params_per_trial = 200;
  double step = 1e-6;
  double snr_db = 10.0;
  bool perturb_weights = false;  // uniform in [0.5, 1.5] instead of all ones
  std::uint64_t seed = 1;
  /// Denominator floor of the relative error for entries that are zero up to
  /// the finite-difference truncation level.
  double rel_floor = 1e-8;
};

namespace detail {

/// Long double copy of a WeightSet, addressable by the same flat index.
struct ExtendedWeights {
  std::size_t per_block = 0;
  std::vector<std::array<std::vector<long double>, kNumWeights>> blocks;

  explicit ExtendedWeights(const WeightSet& w) : per_block(w.dims().per_block()) {
    blocks.resize(static_cast<std::size_t>(w.num_blocks()));
    for (int b = 0; b < w.num_blocks(); ++b)
      for (std::size_t i = 0; i < kNumWeights; ++i)
        blocks[static_cast<std::size_t>(b)][i].assign(w.block(b).w[i].begin(), w.block(b).w[i].end());
  }

  long double& flat(std::size_t i) {
    auto& b = blocks.at(i / per_block);
    i %= per_block;
    for (auto& v : b) {
      if (i < v.size()) return v[i];
      i -= v.size();
    }
    throw DimensionError("ExtendedWeights::flat: index out of range");
  }
};

/// Soft-output loss of the weighted network evaluated in extended precision.
/// Used as the finite-difference oracle: a separate, cache-free evaluation of
/// the same layers with the same floors and clamp.
inline long double extended_loss(const Scenario& s, const ExpandedPilot& P, const ExtendedWeights& W,
                                 const SystemConfig& cfg) {
  using R = long double;
  using C = std::complex<long double>;
  const auto fl = [&](R x) { return x < R(cfg.eps_v) ? R(cfg.eps_v) : x; };
  const auto n_obs = static_cast<std::size_t>(P.num_obs());
  const auto n_var = static_cast<std::size_t>(P.num_vars());
  const std::size_t E = P.num_edges();
  std::vector<C> y(n_obs), pv(E);
  for (std::size_t n = 0; n < n_obs; ++n) y[n] = C(s.y[n].real(), s.y[n].imag());
  for (std::size_t e = 0; e < E; ++e) pv[e] = C(P.value[e].real(), P.value[e].imag());

  R lam = cfg.lambda0;
  std::vector<R> v_dz(n_obs, 1), gamma(static_cast<std::size_t>(P.K), 1), v_h(n_var);
  std::vector<C> m_dz(n_obs), m_h(n_var);
  std::vector<R> A1v(E), A2v(E);
  std::vector<C> A1m(E), A2m(E);
  for (const auto& w : W.blocks) {
    const R invlam = 1 / lam;
    for (std::size_t e = 0; e < E; ++e) {
      const auto n = static_cast<std::size_t>(P.edge_obs[e]);
      A1v[e] = R(P.power[e]) / fl(invlam * w[kLamToA1v][e] + v_dz[n] * w[kVdToA1v][e]);
      A1m[e] = std::conj(pv[e]) * (y[n] * w[kYToA1m][e] - m_dz[n] * w[kMdToA1m][e]) /
               fl(invlam * w[kLamToA1m][e] + v_dz[n] * w[kVdToA1m][e]);
    }
    std::vector<C> mh_new(n_var);
    for (std::size_t j = 0; j < n_var; ++j) {
      R sq = 0;
      C tq{};
      for (int l = 0; l < P.Lt; ++l) {
        const std::size_t e = P.var_edge(static_cast<int>(j), l);
        sq += A1v[e] * w[kA1vToVq][e];
        tq += A1m[e] * w[kA1mToMq][e];
      }
      const R vq = fl(1 / fl(sq));
      const C mq = vq * tq + m_h[j] * w[kHToQ][j];
      const R g = gamma[j / static_cast<std::size_t>(P.dc)];
      v_h[j] = fl(1 / fl(1 / vq + g * w[kGamma][j]));
      mh_new[j] = mq / (w[kOneToH][j] + vq * g * w[kVGammaToH][j]);
    }
    m_h = mh_new;
    const R gnum = R(cfg.a) + R(P.dc) + 1;
    for (int k = 0; k < P.K; ++k) {
      R sm = 0, sv = 0;
      for (int d = 0; d < P.dc; ++d) {
        const auto j = static_cast<std::size_t>(k) * P.dc + d;
        sm += std::norm(m_h[j]) * w[kMhToGamma][j];
        sv += v_h[j] * w[kVhToGamma][j];
      }
      gamma[static_cast<std::size_t>(k)] = gnum / fl(R(cfg.b) + sm + sv);
    }
    for (std::size_t e = 0; e < E; ++e) {
      const auto j = static_cast<std::size_t>(P.edge_var[e]);
      A2v[e] = R(P.power[e]) * v_h[j];
      A2m[e] = pv[e] * m_h[j];
    }
    R sq = 0, sv = 0;
    for (std::size_t n = 0; n < n_obs; ++n) {
      R v = 0;
      C m{};
      for (int i = 0; i < P.dr; ++i) {
        const auto e = static_cast<std::size_t>(P.obs_edges[n * P.dr + i]);
        v += A2v[e] * w[kA2vToVd][e];
        m += A2m[e] * w[kA2mToMd][e];
      }
      const R vd = fl(v);
      const C num = y[n] * w[kYToD][n] - m_dz[n] * w[kMdToMd][n];
      const R den = fl(invlam * w[kLamToD][n] + v_dz[n] * w[kVdToMd][n]);
      const C md = m - vd * (num / den);
      const R vz = fl(1 / fl(lam * w[kLamToZ][n] + (1 / vd) * w[kVdToVz][n]));
      const C mz = vz * ((y[n] * lam) * w[kYLamToZ][n] + (md / vd) * w[kMvToZ][n]);
      sq += std::norm(mz * w[kMzToLam][n] - y[n] * w[kYToLam][n]);
      sv += vz * w[kVzToLam][n];
      v_dz[n] = vd;
      m_dz[n] = md;
    }
    const R lr = R(n_obs) / fl(sq + sv);
    lam = std::clamp(lr, R(kLambdaMin), R(kLambdaMax));
  }
  R loss = 0;
  for (std::size_t j = 0; j < n_var; ++j) loss += std::norm(m_h[j] - C(s.h_bar[j].real(), s.h_bar[j].imag()));
  return loss;
}

}  // namespace detail

using GradientFn =
    std::function<GradSet(const Scenario&, const ExpandedPilot&, const WeightSet&, const SystemConfig&)>;

inline GradSet exact_gradient(const Scenario& s, const ExpandedPilot& P, const WeightSet& w, const SystemConfig& cfg) {
  return loss_and_grad(s, P, w, cfg).second;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares `grad_fn` against central differences of the loss on random
/// instances and random parameter subsets.
inline GradCheckResult grad_check(const SystemConfig& cfg, const GradCheckOptions& opt,
                                  const GradientFn& grad_fn = exact_gradient) {
  const Topology topo = make_topology(cfg);
  const ExpandedPilot& P = topo.pilot;
  GradCheckResult res;
  for (int t = 0; t < opt.trials; ++t) {
    std::mt19937_64 rng(child_seed(opt.seed, static_cast<std::uint64_t>(t)));
    Scenario s = sample_scenario(cfg, P, opt.snr_db, rng);
    // an all-inactive draw has a trivial gradient; force one active user
    if (s.active_set().empty()) {
      s.alpha[0] = 1;
      for (int d = 0; d < cfg.dc; ++d) s.h_bar[static_cast<std::size_t>(d)] = complex_gaussian(rng, 1.0);
      const auto clean = P.apply(s.h_bar);
      for (std::size_t n = 0; n < s.y.size(); ++n) s.y[n] = clean[n] + complex_gaussian(rng, s.noise_var);
    }
    WeightSet w = init_weights(cfg);
    if (opt.perturb_weights) {
      std::uniform_real_distribution<double> u(0.5, 1.5);
      w.for_each_array([&](std::vector<double>& v) {
        for (auto& x : v) x = u(rng);
      });
    }
    const GradSet g = grad_fn(s, P, w, cfg);

    std::vector<std::size_t> idx(w.num_params());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), opt.params_per_trial));
    detail::ExtendedWeights wx(w);
    for (std::size_t i : idx) {
      long double& wi = wx.flat(i);
      const long double orig = wi;
      wi = orig + opt.step;
      const long double lp = detail::extended_loss(s, P, wx, cfg);
      wi = orig - opt.step;
      const long double lm = detail::extended_loss(s, P, wx, cfg);
      wi = orig;
      const auto fd = static_cast<double>((lp - lm) / (2.0L * opt.step));
      const double an = g.flat(i);
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), opt.rel_floor});
      res.max_rel_error = std::max(res.max_rel_error, rel);
      ++res.checked;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind : std::uint8_t { Adam = 0, Sgd = 1 };

struct OptState {
  OptimizerKind kind = OptimizerKind::Adam;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;  // flat, same order as WeightSet::flat
  std::vector<double> v;

  bool operator==(const OptState&) const = default;
};

inline OptState make_opt_state(const WeightSet& w, double lr, OptimizerKind kind = OptimizerKind::Adam) {
  OptState s;
  s.kind = kind;
  s.lr = lr;
  s.m.assign(w.num_params(), 0.0);
  s.v.assign(w.num_params(), 0.0);
  return s;
}

/// Bias-corrected Adam (or plain SGD when opt.kind is Sgd).
inline void adam_step(WeightSet& weights, const GradSet& grads, OptState& opt) {
  if (!weights.same_shape(grads) || opt.m.size() != weights.num_params() || opt.v.size() != weights.num_params())
    throw DimensionError("adam_step: gradient or optimizer state does not match the weights");
  ++opt.step;
  std::vector<const std::vector<double>*> g_arrays;
  grads.for_each_array([&g_arrays](const std::vector<double>& v) { g_arrays.push_back(&v); });
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  std::size_t a = 0, flat = 0;
  weights.for_each_array([&](std::vector<double>& w) {
    const auto& g = *g_arrays[a++];
    for (std::size_t i = 0; i < w.size(); ++i, ++flat) {
      if (opt.kind == OptimizerKind::Sgd) {
        w[i] -= opt.lr * g[i];
        continue;
      }
      opt.m[flat] = opt.beta1 * opt.m[flat] + (1.0 - opt.beta1) * g[i];
      opt.v[flat] = opt.beta2 * opt.v[flat] + (1.0 - opt.beta2) * g[i] * g[i];
      const double mh = opt.m[flat] / bc1;
      const double vh = opt.v[flat] / bc2;
      w[i] -= opt.lr * mh / (std::sqrt(vh) + opt.eps);
    }
  });
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainHyper {
  int epochs = 20;
  std::size_t batch = 200;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 1;
  /// Called after every epoch with (epoch, loss, holdout NMSE).
  std::function<void(int, double, double)> on_epoch;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> holdout_nmse;
  std::vector<double> seconds;
  double initial_holdout_nmse = 0.0;
  int best_epoch = 0;  // 0 = the all-ones initialisation
  bool aborted = false;
  std::string abort_reason;
  std::uint64_t seed = 0;
  std::uint64_t cfg_fingerprint = 0;

  /// CSV: epoch,loss,nmse_holdout,seconds
  std::string to_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "epoch,loss,nmse_holdout,seconds\n";
    for (std::size_t e = 0; e < epoch_loss.size(); ++e)
      out << (e + 1) << ',' << epoch_loss[e] << ',' << holdout_nmse[e] << ',' << seconds[e] << '\n';
    return out.str();
  }
};

/// Mean per-sample NMSE of thresholded estimates, skipping all-zero channels.
inline double holdout_nmse(std::span<const Scenario> holdout, const ExpandedPilot& P, const WeightSet& w,
                           const SystemConfig& cfg) {
  MetricAccumulator acc;
  for (const auto& s : holdout) {
    const Estimate est = infer(s.y, P, w, cfg);
    acc.add(est.h_hat, s.h_bar, est.active_set, s.alpha);
  }
  return acc.mean_nmse();
}

struct TrainResult {
  WeightSet weights;
  OptState opt;
  TrainReport report;
};

/// Trains from all-ones weights with shuffled mini-batches; returns the
/// weights with the best held-out NMSE seen (the initialisation included).
inline TrainResult train(const Dataset& train_set, const Dataset& holdout, const ExpandedPilot& P,
                         const SystemConfig& cfg, const TrainHyper& hyper) {
  train_set.check_matches(cfg);
  holdout.check_matches(cfg);
  if (train_set.samples.empty()) throw DimensionError("train: empty training set");
  if (hyper.batch == 0) throw DimensionError("train: batch size must be positive");

  TrainResult res;
  res.report.seed = hyper.seed;
  res.report.cfg_fingerprint = config_fingerprint(cfg);
  WeightSet w = init_weights(cfg);
  OptState opt = make_opt_state(w, hyper.lr, hyper.optimizer);

  double best = holdout_nmse(holdout.samples, P, w, cfg);
  res.report.initial_holdout_nmse = best;
  res.weights = w;
  res.opt = opt;

  std::mt19937_64 rng(hyper.seed);
  std::vector<std::size_t> order(train_set.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
        const std::size_t stop = std::min(order.size(), start + hyper.batch);
        std::vector<const Scenario*> batch;
        for (std::size_t i = start; i < stop; ++i) batch.push_back(&train_set.samples[order[i]]);
        auto [loss, grad] = batch_loss_and_grad(batch, P, w, cfg);
        loss_sum += loss * static_cast<double>(batch.size());
        adam_step(w, grad, opt);
      }
    } catch (const NumericalError& e) {
      res.report.aborted = true;
      res.report.abort_reason = e.what();
      break;
    }
    double nm = 0.0;
    try {
      nm = holdout_nmse(holdout.samples, P, w, cfg);
    } catch (const NumericalError& e) {
      res.report.aborted = true;
      res.report.abort_reason = e.what();
      break;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.report.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    res.report.holdout_nmse.push_back(nm);
    res.report.seconds.push_back(secs);
    if (nm < best) {
      best = nm;
      res.report.best_epoch = epoch;
      res.weights = w;
      res.opt = opt;
    }
    if (hyper.on_epoch) hyper.on_epoch(epoch, res.report.epoch_loss.back(), nm);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Training checkpoints: weight section, flag u8 = 1, then optimizer kind u8,
// step u64, lr/beta1/beta2/eps f64, count u64, m f64[count], v f64[count].
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, const WeightSet& w, const OptState& opt,
                            const SystemConfig& cfg) {
  using namespace detail;
  if (opt.m.size() != w.num_params() || opt.v.size() != w.num_params())
    throw DimensionError("save_checkpoint: optimizer state does not match the weights");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_weight_section(out, w, config_fingerprint(cfg));
  put(out, std::uint8_t{1});
  put(out, static_cast<std::uint8_t>(opt.kind));
  put(out, opt.step);
  for (double x : {opt.lr, opt.beta1, opt.beta2, opt.eps}) put(out, x);
  put(out, static_cast<std::uint64_t>(opt.m.size()));
  put_bytes(out, opt.m.data(), opt.m.size() * sizeof(double));
  put_bytes(out, opt.v.data(), opt.v.size() * sizeof(double));
  if (!out) throw IoError("write failed: " + path);
}

inline std::pair<WeightSet, std::optional<OptState>> load_checkpoint(const std::string& path,
                                                                     const SystemConfig& cfg) {
  using namespace detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  WeightSet w = read_weight_section(in, cfg);
  const auto flag = get<std::uint8_t>(in);
  if (flag == 0) {
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
    return {std::move(w), std::nullopt};
  }
  if (flag != 1) throw FormatError("checkpoint: bad optimizer flag");
  OptState opt;
  const auto kind = get<std::uint8_t>(in);
  if (kind > 1) throw FormatError("checkpoint: unknown optimizer");
  opt.kind = static_cast<OptimizerKind>(kind);
  opt.step = get<std::uint64_t>(in);
  opt.lr = get<double>(in);
  opt.beta1 = get<double>(in);
  opt.beta2 = get<double>(in);
  opt.eps = get<double>(in);
  const auto count = get<std::uint64_t>(in);
  if (count != w.num_params()) throw FormatError("checkpoint: optimizer state size mismatch");
  opt.m.resize(count);
  opt.v.resize(count);
  get_bytes(in, opt.m.data(), count * sizeof(double));
  get_bytes(in, opt.v.data(), count * sizeof(double));
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return {std::move(w), std::move(opt)};
}

}  // namespace nora

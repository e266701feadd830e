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

#include <span>

#include "nora/core.hpp"
#include "nora/pilots.hpp"

namespace nora {

inline constexpr double kLambdaMin = 1e-6;
inline constexpr double kLambdaMax = 1e9;

/// Messages of one sweep over the factor graph. The delta->z messages,
/// channel means, gamma and lambda carry over to the next sweep; the
/// remaining fields are that sweep's intermediates.
struct MessageState {
  std::vector<double> v_dz;   // [N*Lt] delta -> z variance
  std::vector<cplx> m_dz;     // [N*Lt] delta -> z mean
  std::vector<double> v_Q;    // [K*dc] extrinsic variance
  std::vector<cplx> m_Q;      // [K*dc] extrinsic mean
  std::vector<double> v_h;    // [K*dc] channel posterior variance
  std::vector<cplx> m_h;      // [K*dc] channel posterior mean
  std::vector<double> gamma;  // [K] block precision estimates
  double lambda = 0.0;        // noise precision estimate
  std::vector<double> v_z;    // [N*Lt]
  std::vector<cplx> m_z;      // [N*Lt]
};

struct Estimate {
  std::vector<cplx> h_hat;       // [K*dc], zero outside active_set
  std::vector<int> active_set;   // ascending user indices
  std::vector<double> gamma_inv; // [K]
};

namespace detail {

inline double floor_at(double x, double eps) { return x < eps ? eps : x; }

inline double clamp_lambda(double x) { return x < kLambdaMin ? kLambdaMin : (x > kLambdaMax ? kLambdaMax : x); }

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}
inline bool all_finite(std::span<const cplx> v) {
  return std::all_of(v.begin(), v.end(), [](cplx x) { return std::isfinite(x.real()) && std::isfinite(x.imag()); });
}

inline void check_finite(const MessageState& s, const char* where) {
  const bool ok = std::isfinite(s.lambda) && all_finite(s.v_dz) && all_finite(s.m_dz) && all_finite(s.v_Q) &&
                  all_finite(s.m_Q) && all_finite(s.v_h) && all_finite(s.m_h) && all_finite(s.gamma) &&
                  all_finite(s.v_z) && all_finite(s.m_z);
  if (!ok) throw NumericalError(std::string(where) + ": non-finite message");
}

}  // namespace detail

/// Initial messages: lambda = lambda0, gamma = 1, v_dz = 1, m_dz = 0, m_h = 0.
inline MessageState init_state(const SystemConfig& cfg) {
  validate_config(cfg);
  const auto n_obs = static_cast<std::size_t>(cfg.N) * cfg.Lt;
  const auto n_var = static_cast<std::size_t>(cfg.K) * cfg.dc;
  MessageState s;
  s.v_dz.assign(n_obs, 1.0);
  s.m_dz.assign(n_obs, cplx{});
  s.m_h.assign(n_var, cplx{});
  s.gamma.assign(static_cast<std::size_t>(cfg.K), 1.0);
  s.lambda = cfg.lambda0;
  return s;
}

/// gamma_k = (a + dc + 1) / (b + sum_d |m_h|^2 + sum_d v_h)
inline double gamma_update(std::span<const cplx> m_h_block, std::span<const double> v_h_block, double a, double b,
                           double eps_v) {
  double sm = 0.0, sv = 0.0;
  for (const auto& m : m_h_block) sm += std::norm(m);
  for (double v : v_h_block) sv += v;
  return (a + static_cast<double>(m_h_block.size()) + 1.0) / detail::floor_at(b + sm + sv, eps_v);
}

/// lambda = |y| / (sum |m_z - y|^2 + sum v_z), clamped.
inline double lambda_update(std::span<const cplx> m_z, std::span<const double> v_z, std::span<const cplx> y,
                            double eps_v) {
  if (m_z.size() != y.size() || v_z.size() != y.size()) throw DimensionError("lambda_update: length mismatch");
  double sq = 0.0, sv = 0.0;
  for (std::size_t n = 0; n < y.size(); ++n) {
    sq += std::norm(m_z[n] - y[n]);
    sv += v_z[n];
  }
  return detail::clamp_lambda(static_cast<double>(y.size()) / detail::floor_at(sq + sv, eps_v));
}

/// One MP-BSBL sweep. Steps: extrinsic (v_Q, m_Q); posterior (v_h, m_h);
/// gamma; delta->z messages; z-node; lambda. Everything before the lambda
/// update consumes the previous sweep's lambda.
inline MessageState iterate(const MessageState& prev, std::span<const cplx> y, const ExpandedPilot& P,
                            const SystemConfig& cfg) {
  const int n_obs = P.num_obs();
  const int n_var = P.num_vars();
  if (static_cast<int>(y.size()) != n_obs || static_cast<int>(prev.v_dz.size()) != n_obs ||
      static_cast<int>(prev.m_h.size()) != n_var || static_cast<int>(prev.gamma.size()) != P.K)
    throw DimensionError("mp_bsbl::iterate: inconsistent dimensions");
  using detail::floor_at;
  const double eps = cfg.eps_v;
  const double lam = prev.lambda;
  const double invlam = 1.0 / lam;

  std::vector<double> denom(static_cast<std::size_t>(n_obs));
  std::vector<cplx> resid(static_cast<std::size_t>(n_obs));
  for (int n = 0; n < n_obs; ++n) {
    denom[n] = floor_at(invlam + prev.v_dz[n], eps);
    resid[n] = y[n] - prev.m_dz[n];
  }

  MessageState s;
  s.v_Q.resize(static_cast<std::size_t>(n_var));
  s.m_Q.resize(static_cast<std::size_t>(n_var));
  s.v_h.resize(static_cast<std::size_t>(n_var));
  s.m_h.resize(static_cast<std::size_t>(n_var));
  for (int j = 0; j < n_var; ++j) {
    double prec = 0.0;
    cplx acc{};
    for (int l = 0; l < P.Lt; ++l) {
      const std::size_t e = P.var_edge(j, l);
      const int n = P.edge_obs[e];
      prec += P.power[e] / denom[n];
      acc += std::conj(P.value[e]) * resid[n] / denom[n];
    }
    s.v_Q[j] = floor_at(1.0 / floor_at(prec, eps), eps);
    s.m_Q[j] = s.v_Q[j] * acc + prev.m_h[j];

    const double g = prev.gamma[static_cast<std::size_t>(j / P.dc)];
    s.v_h[j] = floor_at(1.0 / floor_at(1.0 / s.v_Q[j] + g, eps), eps);
    s.m_h[j] = s.m_Q[j] / (1.0 + s.v_Q[j] * g);
  }

  s.gamma.resize(static_cast<std::size_t>(P.K));
  for (int k = 0; k < P.K; ++k) {
    const auto off = static_cast<std::size_t>(k) * P.dc;
    s.gamma[k] = gamma_update(std::span(s.m_h).subspan(off, P.dc), std::span(s.v_h).subspan(off, P.dc), cfg.a,
                              cfg.b, eps);
  }

  s.v_dz.resize(static_cast<std::size_t>(n_obs));
  s.m_dz.resize(static_cast<std::size_t>(n_obs));
  s.v_z.resize(static_cast<std::size_t>(n_obs));
  s.m_z.resize(static_cast<std::size_t>(n_obs));
  for (int n = 0; n < n_obs; ++n) {
    double v = 0.0;
    cplx m{};
    for (int i = 0; i < P.dr; ++i) {
      const auto e = static_cast<std::size_t>(P.obs_edges[static_cast<std::size_t>(n) * P.dr + i]);
      v += P.power[e] * s.v_h[P.edge_var[e]];
      m += P.value[e] * s.m_h[P.edge_var[e]];
    }
    s.v_dz[n] = floor_at(v, eps);
    s.m_dz[n] = m - s.v_dz[n] * (resid[n] / denom[n]);

    s.v_z[n] = floor_at(1.0 / floor_at(lam + 1.0 / s.v_dz[n], eps), eps);
    s.m_z[n] = s.v_z[n] * (y[n] * lam + s.m_dz[n] / s.v_dz[n]);
  }
  s.lambda = lambda_update(s.m_z, s.v_z, y, eps);
  detail::check_finite(s, "mp_bsbl::iterate");
  return s;
}

/// Thresholds gamma: user k is active iff 1/gamma_k > gamma_th (strict).
inline Estimate decide(std::span<const cplx> m_h, std::span<const double> gamma, const SystemConfig& cfg) {
  Estimate est;
  est.h_hat.assign(m_h.size(), cplx{});
  est.gamma_inv.resize(gamma.size());
  for (std::size_t k = 0; k < gamma.size(); ++k) {
    est.gamma_inv[k] = 1.0 / gamma[k];
    if (est.gamma_inv[k] > cfg.gamma_th) {
      est.active_set.push_back(static_cast<int>(k));
      for (int d = 0; d < cfg.dc; ++d) {
        const std::size_t j = k * static_cast<std::size_t>(cfg.dc) + d;
        est.h_hat[j] = m_h[j];
      }
    }
  }
  return est;
}

inline MessageState run_messages(std::span<const cplx> y, const ExpandedPilot& P, const SystemConfig& cfg) {
  MessageState s = init_state(cfg);
  for (int it = 0; it < cfg.Nit; ++it) s = iterate(s, y, P, cfg);
  return s;
}

inline Estimate run(std::span<const cplx> y, const ExpandedPilot& P, const SystemConfig& cfg) {
  const MessageState s = run_messages(y, P, cfg);
  return decide(s.m_h, s.gamma, cfg);
}

}  // namespace nora

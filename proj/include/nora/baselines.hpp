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

#include <Eigen/Dense>
#include <span>

#include "nora/mp_bsbl.hpp"
#include "nora/pilots.hpp"

namespace nora {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

struct GenieInfo {
  std::vector<int> active_set;
  double noise_var = 0.0;
};

/// Dense columns of the user blocks in `users`, in the given order.
inline CMatrix block_columns(const ExpandedPilot& P, std::span<const int> users) {
  CMatrix A = CMatrix::Zero(P.num_obs(), static_cast<Eigen::Index>(users.size()) * P.dc);
  for (std::size_t b = 0; b < users.size(); ++b) {
    const int k = users[b];
    if (k < 0 || k >= P.K) throw DimensionError("block_columns: user index out of range");
    for (int d = 0; d < P.dc; ++d)
      for (int l = 0; l < P.Lt; ++l) {
        const std::size_t e = P.var_edge(k * P.dc + d, l);
        A(P.edge_obs[e], static_cast<Eigen::Index>(b) * P.dc + d) = P.value[e];
      }
  }
  return A;
}

namespace detail {

inline constexpr double kSingularRcond = 1e-13;

inline Eigen::LLT<CMatrix> regularized_normal(const CMatrix& A, double noise_var) {
  CMatrix G = A.adjoint() * A;
  G.diagonal().array() += noise_var;
  Eigen::LLT<CMatrix> llt(G);
  if (llt.info() != Eigen::Success || !(llt.rcond() > kSingularRcond))
    throw SingularityError("regularized normal matrix is numerically singular");
  return llt;
}

inline Estimate scatter_blocks(const ExpandedPilot& P, std::span<const int> users, const CVector& x) {
  Estimate est;
  est.h_hat.assign(static_cast<std::size_t>(P.num_vars()), cplx{});
  est.gamma_inv.assign(static_cast<std::size_t>(P.K), 0.0);
  for (std::size_t b = 0; b < users.size(); ++b)
    for (int d = 0; d < P.dc; ++d)
      est.h_hat[static_cast<std::size_t>(users[b]) * P.dc + d] = x(static_cast<Eigen::Index>(b) * P.dc + d);
  est.active_set.assign(users.begin(), users.end());
  std::sort(est.active_set.begin(), est.active_set.end());
  return est;
}

}  // namespace detail

/// Genie-aided MMSE with unit-variance channel prior on the known active
/// blocks: h_A = (A^H A + sigma^2 I)^-1 A^H y.
inline Estimate ga_mmse(std::span<const cplx> y, const ExpandedPilot& P, const GenieInfo& genie) {
  if (static_cast<int>(y.size()) != P.num_obs()) throw DimensionError("ga_mmse: observation length mismatch");
  if (genie.active_set.empty()) return detail::scatter_blocks(P, {}, CVector());
  const CMatrix A = block_columns(P, genie.active_set);
  const CVector yv = Eigen::Map<const CVector>(y.data(), static_cast<Eigen::Index>(y.size()));
  const auto llt = detail::regularized_normal(A, genie.noise_var);
  const CVector x = llt.solve(A.adjoint() * yv);
  return detail::scatter_blocks(P, genie.active_set, x);
}

/// trace(sigma^2 (A^H A + sigma^2 I)^-1): expected squared error of ga_mmse
/// for a fixed active set.
inline double posterior_mse_oracle(const ExpandedPilot& P, std::span<const int> active_set, double noise_var) {
  if (active_set.empty()) return 0.0;
  const CMatrix A = block_columns(P, active_set);
  const auto llt = detail::regularized_normal(A, noise_var);
  const CMatrix inv = llt.solve(CMatrix::Identity(A.cols(), A.cols()));
  return noise_var * inv.trace().real();
}

/// What bomp does when the selected blocks are linearly dependent.
enum class RankPolicy {
  Throw,    // SingularityError
  MinNorm,  // minimum-norm least-squares solution
};

/// Least-squares fit on the selected blocks.
inline CVector block_least_squares(const CMatrix& A, const CVector& y, RankPolicy policy = RankPolicy::Throw) {
  Eigen::ColPivHouseholderQR<CMatrix> qr(A);
  if (qr.rank() == A.cols()) return qr.solve(y);
  if (policy == RankPolicy::Throw) throw SingularityError("bomp: selected support is rank deficient");
  return Eigen::CompleteOrthogonalDecomposition<CMatrix>(A).solve(y);
}

struct BompTrace {
  std::vector<double> residual_norms;  // after each greedy step
};

/// Block OMP with a known number of active users: pick the block with the
/// largest correlation norm, refit all picked blocks by least squares,
/// update the residual, repeat `Ka` times.
///
/// With more than Lt selected columns on one subcarrier the support is rank
/// deficient whatever the greedy order; `policy` picks between an error and
/// the minimum-norm fit.
inline Estimate bomp(std::span<const cplx> y, const ExpandedPilot& P, int Ka, BompTrace* trace = nullptr,
                     RankPolicy policy = RankPolicy::Throw) {
  if (Ka < 1 || Ka > P.K) throw DimensionError("bomp: need 1 <= Ka <= K");
  if (static_cast<int>(y.size()) != P.num_obs()) throw DimensionError("bomp: observation length mismatch");
  const CVector yv = Eigen::Map<const CVector>(y.data(), static_cast<Eigen::Index>(y.size()));
  CVector r = yv;
  std::vector<int> support;
  std::vector<char> chosen(static_cast<std::size_t>(P.K), 0);
  CVector x;
  for (int step = 0; step < Ka; ++step) {
    int best = -1;
    double best_score = -1.0;
    for (int k = 0; k < P.K; ++k) {
      if (chosen[static_cast<std::size_t>(k)]) continue;
      double score = 0.0;
      for (int d = 0; d < P.dc; ++d) {
        cplx corr{};
        for (int l = 0; l < P.Lt; ++l) {
          const std::size_t e = P.var_edge(k * P.dc + d, l);
          corr += std::conj(P.value[e]) * r(P.edge_obs[e]);
        }
        score += std::norm(corr);
      }
      if (score > best_score) {
        best_score = score;
        best = k;
      }
    }
    chosen[static_cast<std::size_t>(best)] = 1;
    support.push_back(best);
    const CMatrix A = block_columns(P, support);
    x = block_least_squares(A, yv, policy);
    r = yv - A * x;
    if (trace) trace->residual_norms.push_back(r.norm());
  }
  return detail::scatter_blocks(P, support, x);
}

}  // namespace nora

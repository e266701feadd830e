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
#include <gtest/gtest.h>

#include <random>

#include "nora/baselines.hpp"
#include "nora/scenario.hpp"

using namespace nora;

namespace {

using Dense = std::vector<std::vector<cplx>>;

// Gauss-Jordan with partial pivoting on [M | b].
std::vector<cplx> solve(Dense M, std::vector<cplx> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(M[r][c]) > std::abs(M[piv][c])) piv = r;
    std::swap(M[c], M[piv]);
    std::swap(b[c], b[piv]);
    const cplx inv = 1.0 / M[c][c];
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const cplx f = M[r][c] * inv;
      for (std::size_t k = c; k < n; ++k) M[r][k] -= f * M[c][k];
      b[r] -= f * b[c];
    }
  }
  for (std::size_t c = 0; c < n; ++c) b[c] /= M[c][c];
  return b;
}

// Columns of the dense pilot matrix belonging to `users`.
Dense columns(const ExpandedPilot& P, const std::vector<int>& users) {
  const Dense D = P.dense();
  Dense A(D.size());
  for (std::size_t n = 0; n < D.size(); ++n)
    for (int k : users)
      for (int d = 0; d < P.dc; ++d) A[n].push_back(D[n][static_cast<std::size_t>(k * P.dc + d)]);
  return A;
}

// (A^H A + s I) x = A^H y
std::vector<cplx> normal_solve(const Dense& A, const std::vector<cplx>& y, double s) {
  const std::size_t m = A.size(), n = A[0].size();
  Dense G(n, std::vector<cplx>(n));
  std::vector<cplx> rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t r = 0; r < m; ++r) G[i][j] += std::conj(A[r][i]) * A[r][j];
    G[i][i] += s;
    for (std::size_t r = 0; r < m; ++r) rhs[i] += std::conj(A[r][i]) * y[r];
  }
  return solve(G, rhs);
}

}  // namespace

TEST(GaMmse, MatchesDirectSolve) {
  const SystemConfig cfg = desk_config();
  const ExpandedPilot P = make_topology(cfg).pilot;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Scenario s = sample_indexed(cfg, P, 5.0, 31, i);
    const auto act = s.active_set();
    if (act.empty()) continue;
    const Estimate est = ga_mmse(s.y, P, {act, s.noise_var});
    const auto x = normal_solve(columns(P, act), s.y, s.noise_var);
    std::size_t b = 0;
    for (int k = 0; k < cfg.K; ++k) {
      const bool on = std::find(act.begin(), act.end(), k) != act.end();
      for (int d = 0; d < cfg.dc; ++d) {
        const cplx got = est.h_hat[static_cast<std::size_t>(k * cfg.dc + d)];
        if (on) EXPECT_NEAR(std::abs(got - x[b++]), 0.0, 1e-10);
        else EXPECT_EQ(got, cplx{});
      }
    }
    EXPECT_EQ(est.active_set, act);
  }
}

// Users on separate subcarriers have orthogonal columns of squared norm Lt.
TEST(GaMmse, OrthogonalPosteriorTrace) {
  SystemConfig cfg;
  cfg.K = cfg.N = 4;
  cfg.dc = 1;
  cfg.Lt = 5;
  const ExpandedPilot P = make_topology(cfg).pilot;
  const double nv = 0.3;
  const std::vector<int> act{0, 2, 3};
  EXPECT_NEAR(posterior_mse_oracle(P, act, nv), 3 * nv / (cfg.Lt + nv), 1e-12);
}

// P_A^H (y - P_A h) = s h at the regularized solution
TEST(GaMmse, ResidualOrthogonality) {
  const SystemConfig cfg = desk_config();
  const ExpandedPilot P = make_topology(cfg).pilot;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Scenario s = sample_indexed(cfg, P, 0.0, 33, i);
    const auto act = s.active_set();
    if (act.empty()) continue;
    const Estimate est = ga_mmse(s.y, P, {act, s.noise_var});
    const Dense A = columns(P, act);
    const auto fit = P.apply(est.h_hat);
    std::size_t b = 0;
    for (int k : act)
      for (int d = 0; d < cfg.dc; ++d, ++b) {
        cplx lhs{};
        for (std::size_t n = 0; n < A.size(); ++n) lhs += std::conj(A[n][b]) * (s.y[n] - fit[n]);
        EXPECT_NEAR(std::abs(lhs - s.noise_var * est.h_hat[static_cast<std::size_t>(k * cfg.dc + d)]), 0.0, 1e-9);
      }
  }
}

TEST(GaMmse, NoiselessLimit) {
  const SystemConfig cfg = desk_config();
  const ExpandedPilot P = make_topology(cfg).pilot;
  std::vector<cplx> h(static_cast<std::size_t>(P.num_vars()));
  const std::vector<int> act{3, 11};
  for (int k : act)
    for (int d = 0; d < cfg.dc; ++d) h[static_cast<std::size_t>(k * cfg.dc + d)] = {0.3 * k, -0.7 + d};
  const Estimate est = ga_mmse(P.apply(h), P, {act, 1e-14});
  for (std::size_t j = 0; j < h.size(); ++j) EXPECT_NEAR(std::abs(est.h_hat[j] - h[j]), 0.0, 1e-10);
  EXPECT_NEAR(posterior_mse_oracle(P, act, 1e-14), 0.0, 1e-12);
}

TEST(GaMmse, EmptyActiveSet) {
  const SystemConfig cfg = desk_config();
  const ExpandedPilot P = make_topology(cfg).pilot;
  const Scenario s = sample_indexed(cfg, P, 10.0, 1, 0);
  const Estimate est = ga_mmse(s.y, P, {{}, s.noise_var});
  for (auto h : est.h_hat) EXPECT_EQ(h, cplx{});
  EXPECT_TRUE(est.active_set.empty());
  EXPECT_EQ(posterior_mse_oracle(P, {}, 0.1), 0.0);
}

TEST(GaMmse, SingularWithoutNoise) {
  const SystemConfig cfg = desk_config();  // 40 channel taps, 20 observations
  const ExpandedPilot P = make_topology(cfg).pilot;
  std::vector<int> all(static_cast<std::size_t>(cfg.K));
  std::iota(all.begin(), all.end(), 0);
  const std::vector<cplx> y(static_cast<std::size_t>(P.num_obs()), cplx{1.0, 0.0});
  EXPECT_THROW(ga_mmse(y, P, {all, 0.0}), SingularityError);
  EXPECT_NO_THROW(ga_mmse(y, P, {all, 0.1}));
}

TEST(Bomp, SupportSizeAndResidual) {
  const SystemConfig cfg = desk_config();
  const ExpandedPilot P = make_topology(cfg).pilot;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Scenario s = sample_indexed(cfg, P, 10.0, 41, i);
    const int Ka = std::max<int>(1, static_cast<int>(s.active_set().size()));
    BompTrace tr;
    const Estimate est = bomp(s.y, P, Ka, &tr);
    EXPECT_EQ(est.active_set.size(), static_cast<std::size_t>(Ka));
    ASSERT_EQ(tr.residual_norms.size(), static_cast<std::size_t>(Ka));
    for (std::size_t t = 1; t < tr.residual_norms.size(); ++t)
      EXPECT_LE(tr.residual_norms[t], tr.residual_norms[t - 1] * (1 + 1e-12));
  }
}

// First pick is the largest block correlation; the returned coefficients are
// the least-squares fit on the returned support.
TEST(Bomp, MatchesBruteForce) {
  const SystemConfig cfg = desk_config();
  const ExpandedPilot P = make_topology(cfg).pilot;
  const Dense D = P.dense();
  for (std::uint64_t i = 0; i < 10; ++i) {
    const Scenario s = sample_indexed(cfg, P, 10.0, 43, i);
    int best = -1;
    double best_score = -1.0;
    for (int k = 0; k < cfg.K; ++k) {
      double score = 0.0;
      for (int d = 0; d < cfg.dc; ++d) {
        cplx c{};
        for (std::size_t n = 0; n < D.size(); ++n) c += std::conj(D[n][static_cast<std::size_t>(k * cfg.dc + d)]) * s.y[n];
        score += std::norm(c);
      }
      if (score > best_score) {
        best_score = score;
        best = k;
      }
    }
    BompTrace tr;
    const Estimate one = bomp(s.y, P, 1, &tr);
    ASSERT_EQ(one.active_set.size(), 1u);
    EXPECT_EQ(one.active_set[0], best);

    const Estimate three = bomp(s.y, P, 3);
    const auto x = normal_solve(columns(P, three.active_set), s.y, 0.0);
    std::size_t b = 0;
    for (int k : three.active_set)
      for (int d = 0; d < cfg.dc; ++d)
        EXPECT_NEAR(std::abs(three.h_hat[static_cast<std::size_t>(k * cfg.dc + d)] - x[b++]), 0.0, 1e-9);
  }
}

TEST(Bomp, NoiselessSingleUserIsExact) {
  const SystemConfig cfg = desk_config();
  const ExpandedPilot P = make_topology(cfg).pilot;
  std::vector<cplx> h(static_cast<std::size_t>(P.num_vars()));
  h[14] = {0.8, -0.3};
  h[15] = {-1.1, 0.4};
  const Estimate est = bomp(P.apply(h), P, 1);
  EXPECT_EQ(est.active_set, std::vector<int>{7});
  for (std::size_t j = 0; j < h.size(); ++j) EXPECT_NEAR(std::abs(est.h_hat[j] - h[j]), 0.0, 1e-12);
}

TEST(Bomp, AllUsersIsDenseLeastSquares) {
  SystemConfig cfg;
  cfg.K = cfg.N = 4;
  cfg.dc = 1;
  cfg.Lt = 5;
  const ExpandedPilot P = make_topology(cfg).pilot;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  std::vector<cplx> y(static_cast<std::size_t>(P.num_obs()));
  for (auto& v : y) v = {g(rng), g(rng)};
  const Estimate est = bomp(y, P, cfg.K);
  EXPECT_EQ(est.active_set.size(), 4u);
  const auto x = normal_solve(columns(P, {0, 1, 2, 3}), y, 0.0);
  for (std::size_t j = 0; j < x.size(); ++j) EXPECT_NEAR(std::abs(est.h_hat[j] - x[j]), 0.0, 1e-10);
}

// K = 6 with two active users at 20 dB: the greedy support should agree with
// the best of all 15 two-user supports almost always.
TEST(Bomp, AgreesWithExhaustiveSearch) {
  SystemConfig cfg;
  cfg.K = 6;
  cfg.N = 2;
  cfg.dc = 1;
  cfg.Lt = 5;
  const ExpandedPilot P = make_topology(cfg).pilot;
  const double nv = snr_to_noise_var(20.0);
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> pick(0, cfg.K - 1);
  int agree = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    int a = pick(rng), b = pick(rng);
    while (b == a) b = pick(rng);
    std::vector<cplx> h(static_cast<std::size_t>(cfg.K));
    h[static_cast<std::size_t>(a)] = complex_gaussian(rng, 1.0);
    h[static_cast<std::size_t>(b)] = complex_gaussian(rng, 1.0);
    auto y = P.apply(h);
    for (auto& v : y) v += complex_gaussian(rng, nv);

    std::vector<int> best;
    double best_res = std::numeric_limits<double>::infinity();
    for (int i = 0; i < cfg.K; ++i)
      for (int j = i + 1; j < cfg.K; ++j) {
        const std::vector<int> sup{i, j};
        const Dense A = columns(P, sup);
        const auto x = normal_solve(A, y, 0.0);
        double res = 0.0;
        for (std::size_t n = 0; n < A.size(); ++n) res += std::norm(y[n] - A[n][0] * x[0] - A[n][1] * x[1]);
        if (res < best_res) {
          best_res = res;
          best = sup;
        }
      }
    if (bomp(y, P, 2).active_set == best) ++agree;
  }
  EXPECT_GE(agree, 950);
}

TEST(Bomp, RankDeficientSupport) {
  SystemConfig cfg;
  cfg.K = 4;
  cfg.N = 1;
  cfg.dc = 1;
  cfg.Lt = 3;  // four columns in a three-dimensional space
  const ExpandedPilot P = make_topology(cfg).pilot;
  const std::vector<cplx> y{{1, 0}, {0, 1}, {-1, 0.5}};
  EXPECT_THROW(bomp(y, P, 4), SingularityError);
  BompTrace tr;
  const Estimate est = bomp(y, P, 4, &tr, RankPolicy::MinNorm);
  EXPECT_EQ(est.active_set.size(), 4u);
  EXPECT_NEAR(tr.residual_norms.back(), 0.0, 1e-12);
  // an exact fit, no longer than the exact fit on three of the columns
  const std::vector<cplx> fit = P.apply(est.h_hat);
  for (std::size_t n = 0; n < y.size(); ++n) EXPECT_NEAR(std::abs(fit[n] - y[n]), 0.0, 1e-12);
  const auto x = normal_solve(columns(P, {0, 1, 2}), y, 0.0);
  double sq_min = 0.0, sq_three = 0.0;
  for (auto v : est.h_hat) sq_min += std::norm(v);
  for (auto v : x) sq_three += std::norm(v);
  EXPECT_LE(sq_min, sq_three + 1e-12);
}

TEST(Bomp, BadActiveCount) {
  const SystemConfig cfg = desk_config();
  const ExpandedPilot P = make_topology(cfg).pilot;
  const std::vector<cplx> y(static_cast<std::size_t>(P.num_obs()), cplx{1.0, 0.0});
  EXPECT_THROW(bomp(y, P, 0), DimensionError);
  EXPECT_THROW(bomp(y, P, cfg.K + 1), DimensionError);
  EXPECT_THROW(bomp(std::vector<cplx>(3), P, 1), DimensionError);
}

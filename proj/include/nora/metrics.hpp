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

namespace nora {

/// Sum of squared magnitudes of (estimate - truth).
inline double loss_mse(std::span<const cplx> estimate, std::span<const cplx> truth) {
  if (estimate.size() != truth.size()) throw DimensionError("loss_mse: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) acc += std::norm(estimate[i] - truth[i]);
  return acc;
}

/// ||h_hat - h||^2 / ||h||^2; undefined when h is all zero.
inline double nmse(std::span<const cplx> h_hat, std::span<const cplx> h_true) {
  if (h_hat.size() != h_true.size()) throw DimensionError("nmse: length mismatch");
  double energy = 0.0;
  for (const auto& h : h_true) energy += std::norm(h);
  if (energy == 0.0) throw DegenerateSampleError("nmse: true channel is all zero");
  return loss_mse(h_hat, h_true) / energy;
}

struct UadRates {
  double miss = 0.0;
  double false_alarm = 0.0;
};

/// miss = |truth \ detected| / max(1, |truth|),
/// false alarm = |detected \ truth| / max(1, K - |truth|).
inline UadRates uad_metrics(std::span<const int> detected, std::span<const std::uint8_t> alpha_true) {
  const std::size_t K = alpha_true.size();
  std::vector<char> hit(K, 0);
  for (int k : detected) {
    if (k < 0 || static_cast<std::size_t>(k) >= K) throw DimensionError("uad_metrics: user index out of range");
    hit[static_cast<std::size_t>(k)] = 1;
  }
  std::size_t n_true = 0, missed = 0, false_alarms = 0;
  for (std::size_t k = 0; k < K; ++k) {
    if (alpha_true[k]) {
      ++n_true;
      if (!hit[k]) ++missed;
    } else if (hit[k]) {
      ++false_alarms;
    }
  }
  UadRates r;
  r.miss = static_cast<double>(missed) / static_cast<double>(std::max<std::size_t>(1, n_true));
  r.false_alarm = static_cast<double>(false_alarms) / static_cast<double>(std::max<std::size_t>(1, K - n_true));
  return r;
}

/// Running means over a test set. NMSE skips (and counts) samples whose true
/// channel is zero; UAD rates average over every sample.
struct MetricAccumulator {
  double nmse_sum = 0.0;
  std::size_t nmse_count = 0;
  std::size_t degenerate = 0;
  double miss_sum = 0.0;
  double fa_sum = 0.0;
  std::size_t samples = 0;

  void add(std::span<const cplx> h_hat, std::span<const cplx> h_true, std::span<const int> detected,
           std::span<const std::uint8_t> alpha) {
    try {
      nmse_sum += nmse(h_hat, h_true);
      ++nmse_count;
    } catch (const DegenerateSampleError&) {
      ++degenerate;
    }
    const auto r = uad_metrics(detected, alpha);
    miss_sum += r.miss;
    fa_sum += r.false_alarm;
    ++samples;
  }

  double mean_nmse() const { return nmse_count ? nmse_sum / static_cast<double>(nmse_count) : 0.0; }
  double mean_miss() const { return samples ? miss_sum / static_cast<double>(samples) : 0.0; }
  double mean_fa() const { return samples ? fa_sum / static_cast<double>(samples) : 0.0; }
};

}  // namespace nora

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

#include <cstdio>
#include <functional>
#include <ostream>

#include "nora/baselines.hpp"
#include "nora/metrics.hpp"
#include "nora/training.hpp"

namespace nora {

enum class Estimator { MpBsbl, Dnn, Bomp, GaMmse };

inline const char* estimator_name(Estimator e) {
  switch (e) {
    case Estimator::MpBsbl: return "mp-bsbl";
    case Estimator::Dnn: return "dnn";
    case Estimator::Bomp: return "bomp";
    case Estimator::GaMmse: return "ga-mmse";
  }
  return "?";
}

inline Estimator parse_estimator(const std::string& name) {
  for (Estimator e : {Estimator::MpBsbl, Estimator::Dnn, Estimator::Bomp, Estimator::GaMmse})
    if (name == estimator_name(e)) return e;
  throw UsageError("unknown estimator '" + name + "'");
}

struct EvalRow {
  double snr_db = 0.0;
  std::string estimator;
  int nit = 0;
  double nmse = 0.0;
  double uad_miss = 0.0;
  double uad_fa = 0.0;
  std::size_t n = 0;  // samples that entered the NMSE mean
  std::uint64_t seed = 0;

  bool operator==(const EvalRow&) const = default;
};

inline constexpr const char* kEvalCsvHeader = "snr_db,estimator,nit,nmse,uad_miss,uad_fa,n,seed";

inline std::string to_csv_line(const EvalRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.6g,%s,%d,%.10g,%.10g,%.10g,%zu,%llu", r.snr_db, r.estimator.c_str(), r.nit,
                r.nmse, r.uad_miss, r.uad_fa, r.n, static_cast<unsigned long long>(r.seed));
  return buf;
}

inline void write_csv(std::ostream& out, std::span<const EvalRow> rows) {
  out << kEvalCsvHeader << '\n';
  for (const auto& r : rows) out << to_csv_line(r) << '\n';
}

/// Runs one estimator over a test set. `dnn` is required for Estimator::Dnn.
/// BOMP gets the true active count and falls back to the minimum-norm fit on
/// a rank-deficient support; an all-inactive sample yields a zero estimate. GA-MMSE gets the true active set and noise variance.
inline EvalRow evaluate(Estimator est, std::span<const Scenario> test, const ExpandedPilot& P,
                        const SystemConfig& cfg, const WeightSet* dnn = nullptr) {
  if (est == Estimator::Dnn && !dnn) throw UsageError("dnn estimator needs weights");
  EvalRow row;
  row.estimator = estimator_name(est);
  switch (est) {
    case Estimator::MpBsbl: row.nit = cfg.Nit; break;
    case Estimator::Dnn: row.nit = dnn->num_blocks(); break;
    default: row.nit = 0;
  }
  MetricAccumulator acc;
  for (const auto& s : test) {
    Estimate e;
    switch (est) {
      case Estimator::MpBsbl: e = run(s.y, P, cfg); break;
      case Estimator::Dnn: e = infer(s.y, P, *dnn, cfg); break;
      case Estimator::Bomp: {
        const auto ka = static_cast<int>(s.active_set().size());
        e = ka > 0 ? bomp(s.y, P, ka, nullptr, RankPolicy::MinNorm) : detail::scatter_blocks(P, {}, CVector());
        break;
      }
      case Estimator::GaMmse: e = ga_mmse(s.y, P, GenieInfo{s.active_set(), s.noise_var}); break;
    }
    acc.add(e.h_hat, s.h_bar, e.active_set, s.alpha);
  }
  row.nmse = acc.mean_nmse();
  row.uad_miss = acc.mean_miss();
  row.uad_fa = acc.mean_fa();
  row.n = acc.nmse_count;
  return row;
}

struct SweepOptions {
  std::vector<double> snr_db;
  std::vector<Estimator> estimators;
  std::size_t samples = 1000;  // per SNR
  std::uint64_t seed = 1;
};

/// Weights for the dnn rows, asked once per SNR point.
using WeightProvider = std::function<WeightSet(double snr_db)>;

/// One row per (snr, estimator), SNR-major. Test set i is drawn from
/// child_seed(seed, i), so rows do not depend on which estimators ran.
inline std::vector<EvalRow> sweep_snr(const SystemConfig& cfg, const ExpandedPilot& P, const SweepOptions& opt,
                                      const WeightProvider& dnn_weights = {}) {
  std::vector<EvalRow> rows;
  if (opt.estimators.empty()) return rows;
  for (std::size_t i = 0; i < opt.snr_db.size(); ++i) {
    const double snr = opt.snr_db[i];
    const Dataset test = generate_dataset(cfg, P, {snr}, opt.samples, child_seed(opt.seed, i));
    std::optional<WeightSet> w;
    for (Estimator est : opt.estimators) {
      if (est == Estimator::Dnn && !w) {
        if (!dnn_weights) throw UsageError("sweep: dnn estimator requested without weights");
        w = dnn_weights(snr);
      }
      EvalRow r = evaluate(est, test.samples, P, cfg, w ? &*w : nullptr);
      r.snr_db = snr;
      r.seed = opt.seed;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

/// Expected ordering ga-mmse <= dnn <= mp-bsbl per SNR; one message per
/// violated pair.
inline std::vector<std::string> ordering_violations(std::span<const EvalRow> rows) {
  std::vector<std::string> out;
  std::map<double, std::map<std::string, double>> by_snr;
  for (const auto& r : rows) by_snr[r.snr_db][r.estimator] = r.nmse;
  for (const auto& [snr, m] : by_snr) {
    const auto check = [&](const char* lo, const char* hi) {
      if (m.count(lo) && m.count(hi) && m.at(lo) > m.at(hi)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "snr %g: %s nmse %.6g > %s nmse %.6g", snr, lo, m.at(lo), hi, m.at(hi));
        out.emplace_back(buf);
      }
    };
    check("ga-mmse", "dnn");
    check("dnn", "mp-bsbl");
  }
  return out;
}

}  // namespace nora

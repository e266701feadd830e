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

// End-to-end acceptance run. Prints one PASS / WARN / FAIL line per
// criterion and exits non-zero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>

#include "nora/nora.hpp"

using namespace nora;

namespace {

enum class Verdict { Pass, Warn, Fail };

struct Outcome {
  Verdict verdict = Verdict::Fail;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) { return {ok ? Verdict::Pass : Verdict::Fail, std::move(detail)}; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_err(double a, double b) {
  const double d = std::abs(a - b);
  return d == 0.0 ? 0.0 : d / std::max(std::abs(a), std::abs(b));
}

double rel_err(cplx a, cplx b) {
  const double d = std::abs(a - b);
  return d == 0.0 ? 0.0 : d / std::max(std::abs(a), std::abs(b));
}

template <class T>
double max_rel(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

double max_rel(const MessageState& a, const MessageState& b) {
  return std::max({max_rel(a.v_dz, b.v_dz), max_rel(a.m_dz, b.m_dz), max_rel(a.v_Q, b.v_Q), max_rel(a.m_Q, b.m_Q),
                   max_rel(a.v_h, b.v_h), max_rel(a.m_h, b.m_h), max_rel(a.gamma, b.gamma),
                   rel_err(a.lambda, b.lambda), max_rel(a.v_z, b.v_z), max_rel(a.m_z, b.m_z)});
}

// Shared desk-scale training protocol: Nit = 5, 1e4 training samples, 5
// epochs, batch 200, Adam at lr 1e-3, 1e3 held-out samples for model
// selection and 1e4 fresh test samples.
struct DeskRun {
  SystemConfig cfg;
  Topology topo;
  std::map<double, TrainResult> trained;
  std::map<double, Dataset> test;

  DeskRun() : cfg(desk_config()), topo(make_topology(cfg)) {}

  const TrainResult& at(double snr) {
    auto it = trained.find(snr);
    if (it != trained.end()) return it->second;
    const auto i = static_cast<std::uint64_t>(std::lround(snr * 10.0) + 1000);
    const Dataset tr = generate_dataset(cfg, topo.pilot, {snr}, 10000, child_seed(11, i));
    const Dataset ho = generate_dataset(cfg, topo.pilot, {snr}, 1000, child_seed(12, i));
    test.emplace(snr, generate_dataset(cfg, topo.pilot, {snr}, 10000, child_seed(13, i)));
    TrainHyper h;
    h.epochs = 5;
    h.batch = 200;
    h.lr = 1e-3;
    h.seed = 5;
    return trained.emplace(snr, train(tr, ho, topo.pilot, cfg, h)).first->second;
  }
};

Outcome unit_weight_equivalence() {
  double worst = 0.0;
  std::size_t compared = 0;
  for (const SystemConfig& cfg : {SystemConfig{}, desk_config()}) {
    const ExpandedPilot P = make_topology(cfg).pilot;
    const WeightSet ones = init_weights(cfg);
    for (std::uint64_t i = 0; i < 100; ++i) {
      const Scenario s = sample_indexed(cfg, P, 5.0 * static_cast<double>(i % 5), 101, i);
      const ForwardCache fc = forward(s.y, P, ones, cfg);
      MessageState ref = init_state(cfg);
      for (const BlockCache& b : fc.blocks) {
        ref = iterate(ref, s.y, P, cfg);
        worst = std::max(worst, max_rel(b.to_state(), ref));
        ++compared;
      }
    }
  }
  return pass_if(worst <= 1e-12, fmt("max relative error %.3g over %zu block outputs", worst, compared));
}

Outcome gradient_exactness() {
  GradCheckOptions opt;
  opt.trials = 10;
  opt.params_per_trial = 200;
  opt.step = 1e-6;
  const auto unit = grad_check(desk_config(), opt);
  opt.perturb_weights = true;
  opt.seed = 2;
  const auto pert = grad_check(desk_config(), opt);
  const double worst = std::max(unit.max_rel_error, pert.max_rel_error);
  return pass_if(worst < 1e-4, fmt("max relative error %.3g (unit weights %.3g, perturbed %.3g), %zu parameters",
                                   worst, unit.max_rel_error, pert.max_rel_error, unit.checked + pert.checked));
}

Outcome ga_mmse_consistency() {
  std::string detail;
  bool ok = true;
  for (const SystemConfig& cfg : {SystemConfig{}, desk_config()}) {
    const ExpandedPilot P = make_topology(cfg).pilot;
    double mc = 0.0, oracle = 0.0;
    for (std::uint64_t i = 0; i < 10000; ++i) {
      const Scenario s = sample_indexed(cfg, P, 10.0, 301, i);
      const auto act = s.active_set();
      const Estimate est = ga_mmse(s.y, P, {act, s.noise_var});
      mc += loss_mse(est.h_hat, s.h_bar);
      oracle += posterior_mse_oracle(P, act, s.noise_var);
    }
    const double rel = std::abs(mc - oracle) / oracle;
    ok = ok && rel <= 0.02;
    detail += fmt("%sK=%d: MC %.5g vs oracle %.5g (%.2f%%)", detail.empty() ? "" : "; ", cfg.K, mc / 1e4,
                  oracle / 1e4, 100 * rel);
  }
  return pass_if(ok, detail);
}

Outcome training_improves(DeskRun& run) {
  const TrainResult& r = run.at(10.0);
  const double init = r.report.initial_holdout_nmse;
  const double best = *std::min_element(r.report.holdout_nmse.begin(), r.report.holdout_nmse.end());
  const double improvement = (init - best) / init;

  const Dataset& test = run.test.at(10.0);
  const double dnn5 = evaluate(Estimator::Dnn, test.samples, run.topo.pilot, run.cfg, &r.weights).nmse;
  SystemConfig c10 = run.cfg;
  c10.Nit = 10;
  const double mp10 = evaluate(Estimator::MpBsbl, test.samples, run.topo.pilot, c10).nmse;
  const double miss = (dnn5 - mp10) / mp10;

  const std::string detail =
      fmt("held-out NMSE %.4g -> %.4g (%.1f%% better, need >= 10%%); test NMSE trained Nit=5 %.4g vs MP-BSBL Nit=10 "
          "%.4g (%+.1f%%)",
          init, best, 100 * improvement, dnn5, mp10, 100 * miss);
  if (r.report.aborted || !(best < init) || improvement < 0.10) return {Verdict::Fail, detail};
  if (dnn5 <= mp10) return {Verdict::Pass, detail};
  return {miss < 0.05 ? Verdict::Warn : Verdict::Fail, detail};
}

Outcome bound_ordering(DeskRun& run) {
  bool ok = true;
  std::string detail = "NMSE GA/DNN/MP5:";
  for (double snr : {0.0, 5.0, 10.0, 15.0}) {
    const TrainResult& r = run.at(snr);
    const Dataset& test = run.test.at(snr);
    const double ga = evaluate(Estimator::GaMmse, test.samples, run.topo.pilot, run.cfg).nmse;
    const double dnn = evaluate(Estimator::Dnn, test.samples, run.topo.pilot, run.cfg, &r.weights).nmse;
    const double mp = evaluate(Estimator::MpBsbl, test.samples, run.topo.pilot, run.cfg).nmse;
    const bool here = ga <= dnn && dnn <= mp;
    ok = ok && here;
    detail += fmt(" %gdB %.4g/%.4g/%.4g%s", snr, ga, dnn, mp, here ? "" : "(violated)");
  }
  return pass_if(ok, detail);
}

Outcome zc_properties() {
  const int Lt = 11;
  const PilotBank bank = gen_zc_bank(Lt, 110);
  double auto_worst = 0.0, cross_worst = 0.0;
  std::vector<std::vector<cplx>> rows(110, std::vector<cplx>(Lt));
  for (int k = 0; k < 110; ++k)
    for (int l = 0; l < Lt; ++l) rows[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)] = bank.at(k, l);
  for (int k = 0; k < 110; ++k) {
    const auto& a = rows[static_cast<std::size_t>(k)];
    for (int tau = 1; tau < Lt; ++tau) auto_worst = std::max(auto_worst, std::abs(periodic_correlation(a, a, tau)));
    for (int k2 = 0; k2 < 110; ++k2) {
      if (k / Lt == k2 / Lt) continue;  // same root
      const auto& b = rows[static_cast<std::size_t>(k2)];
      for (int tau = 0; tau < Lt; ++tau)
        cross_worst = std::max(cross_worst, std::abs(std::abs(periodic_correlation(a, b, tau)) - std::sqrt(11.0)));
    }
  }
  return pass_if(auto_worst < 1e-9 && cross_worst < 1e-9,
                 fmt("max |autocorrelation| at nonzero lag %.3g; max ||cross| - sqrt(11)| %.3g", auto_worst,
                     cross_worst));
}

Outcome statistical_sanity() {
  const SystemConfig cfg;
  const ExpandedPilot P = make_topology(cfg).pilot;
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    sum += static_cast<double>(sample_indexed(cfg, P, 10.0, 701, static_cast<std::uint64_t>(i)).active_set().size());
  const double mean = sum / n;
  const double sigma = std::sqrt(cfg.K * cfg.Pa * (1 - cfg.Pa) / n);

  const Dataset ds = generate_dataset(cfg, P, {0.0, 10.0}, 200, 703);
  std::ostringstream a(std::ios::binary), b(std::ios::binary);
  write_dataset(ds, a);
  std::istringstream in(a.str(), std::ios::binary);
  const Dataset back = read_dataset(in);
  write_dataset(back, b);
  const bool round_trip = back == ds && a.str() == b.str();

  return pass_if(std::abs(mean - 11.0) <= 3 * sigma && round_trip,
                 fmt("mean active users %.4f (11 +/- %.4f); dataset round trip %s", mean, 3 * sigma,
                     round_trip ? "bit-exact" : "MISMATCH"));
}

Outcome uad_separation(DeskRun& run) {
  const TrainResult& r = run.at(15.0);
  const Dataset& test = run.test.at(15.0);
  const EvalRow dnn = evaluate(Estimator::Dnn, test.samples, run.topo.pilot, run.cfg, &r.weights);
  const EvalRow mp = evaluate(Estimator::MpBsbl, test.samples, run.topo.pilot, run.cfg);
  const double d = dnn.uad_miss + dnn.uad_fa, m = mp.uad_miss + mp.uad_fa;
  return pass_if(d <= m, fmt("miss+FA trained %.4g (%.4g + %.4g) vs MP-BSBL %.4g (%.4g + %.4g)", d, dnn.uad_miss,
                             dnn.uad_fa, m, mp.uad_miss, mp.uad_fa));
}

}  // namespace

int main() {
  DeskRun desk;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"unit-weight equivalence", unit_weight_equivalence},
      {"gradient exactness", gradient_exactness},
      {"GA-MMSE bound consistency", ga_mmse_consistency},
      {"training improves over baseline", [&] { return training_improves(desk); }},
      {"bound ordering", [&] { return bound_ordering(desk); }},
      {"ZC properties", zc_properties},
      {"statistical sanity", statistical_sanity},
      {"UAD separation", [&] { return uad_separation(desk); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Verdict::Fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Warn ? "WARN" : "FAIL";
    if (o.verdict == Verdict::Fail) ++failed;
    std::cout << tag << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail << " [" << fmt("%.1f", secs)
              << "s]" << std::endl;
  }
  std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criterion(s) failed" : "acceptance: all passed")
            << std::endl;
  return failed ? 1 : 0;
}

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

// nora_cli: dataset generation, training, evaluation, SNR sweeps and the
// gradient check from the command line.

#include <CLI11.hpp>

#include <iostream>

#include "nora/nora.hpp"

namespace {

using namespace nora;

struct Common {
  std::string config;
  std::string preset = "full";
  std::uint64_t seed = 1;
  std::string out;
};

SystemConfig resolve_config(const Common& c) {
  if (!c.config.empty()) return load_config(c.config);
  if (c.preset == "full") return SystemConfig{};
  if (c.preset == "desk") return desk_config();
  throw UsageError("unknown preset '" + c.preset + "'");
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key=value config file");
  sub->add_option("--preset", c.preset, "built-in config when --config is absent: full or desk");
  sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--out", c.out, "output path (stdout when absent)");
}

// Writes text output to --out, or stdout.
void emit(const Common& c, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(c.out);
  if (!f) throw IoError("cannot open " + c.out + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + c.out);
}

std::vector<Estimator> parse_estimators(const std::vector<std::string>& names) {
  std::vector<Estimator> v;
  for (const auto& n : names)
    if (!n.empty()) v.push_back(parse_estimator(n));
  return v;
}

struct TrainArgs {
  std::string data;
  std::string holdout;
  std::vector<double> snr{10.0};
  std::size_t count = 10000;
  std::size_t holdout_count = 1000;
  int epochs = 5;
  std::size_t batch = 200;
  double lr = 1e-3;
  std::string optimizer = "adam";
  std::string log;
  bool mixed = false;
};

void add_train_options(CLI::App* sub, TrainArgs& t) {
  sub->add_option("--train-count", t.count, "training samples per SNR when generating (in total with --mixed-snr)");
  sub->add_option("--holdout-count", t.holdout_count, "held-out samples per SNR when generating (in total with --mixed-snr)");
  sub->add_option("--epochs", t.epochs);
  sub->add_option("--batch", t.batch);
  sub->add_option("--lr", t.lr);
  sub->add_option("--optimizer", t.optimizer, "adam or sgd");
  sub->add_option("--log", t.log, "per-epoch training log CSV");
  sub->add_flag("--mixed-snr", t.mixed, "draw each training sample's SNR uniformly from the --snr list");
}

TrainHyper make_hyper(const TrainArgs& t, std::uint64_t seed) {
  TrainHyper h;
  h.epochs = t.epochs;
  h.batch = t.batch;
  h.lr = t.lr;
  h.seed = seed;
  if (t.optimizer == "adam")
    h.optimizer = OptimizerKind::Adam;
  else if (t.optimizer == "sgd")
    h.optimizer = OptimizerKind::Sgd;
  else
    throw UsageError("unknown optimizer '" + t.optimizer + "'");
  h.on_epoch = [](int epoch, double loss, double nm) {
    std::cerr << "epoch " << epoch << " loss " << loss << " nmse_holdout " << nm << '\n';
  };
  return h;
}

Dataset generate_for_training(const SystemConfig& cfg, const ExpandedPilot& P, const std::vector<double>& snr,
                              std::size_t count, bool mixed, std::uint64_t seed) {
  return mixed ? generate_mixed_dataset(cfg, P, snr, count, seed) : generate_dataset(cfg, P, snr, count, seed);
}

// Trains on generated data at the given SNRs; training, held-out and any
// later test data come from disjoint child seeds.
TrainResult train_generated(const SystemConfig& cfg, const ExpandedPilot& P, const std::vector<double>& snr,
                            const TrainArgs& t, std::uint64_t seed) {
  const Dataset tr = generate_for_training(cfg, P, snr, t.count, t.mixed, child_seed(seed, 1000));
  const Dataset ho = generate_for_training(cfg, P, snr, t.holdout_count, t.mixed, child_seed(seed, 1001));
  return train(tr, ho, P, cfg, make_hyper(t, seed));
}

void write_log(const std::string& path, const TrainReport& r) {
  if (path.empty()) return;
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << r.to_csv();
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Grant-free random access: message-passing block SBL and its unfolded, trainable network"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, sweep_c, gc_c;

  // gen
  auto* gen = app.add_subcommand("gen", "generate a dataset file");
  add_common(gen, gen_c);
  std::vector<double> gen_snr{10.0};
  std::size_t gen_count = 1000;
  gen->add_option("--snr", gen_snr, "SNR list in dB")->delimiter(',');
  gen->add_option("--count", gen_count, "samples per SNR");

  // train
  auto* tr = app.add_subcommand("train", "train the unfolded network and write a checkpoint");
  add_common(tr, train_c);
  TrainArgs targs;
  tr->add_option("--data", targs.data, "training dataset (generated when absent)");
  tr->add_option("--holdout", targs.holdout, "held-out dataset (generated when absent)");
  tr->add_option("--snr", targs.snr, "SNR list in dB for generated data")
      ->delimiter(',');
  add_train_options(tr, targs);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate estimators on a dataset");
  add_common(ev, eval_c);
  std::string ev_data, ev_weights;
  std::vector<std::string> ev_est{"mp-bsbl", "bomp", "ga-mmse"};
  std::vector<double> ev_snr{10.0};
  std::size_t ev_count = 1000;
  ev->add_option("--data", ev_data, "test dataset (generated when absent)");
  ev->add_option("--weights", ev_weights, "checkpoint for the dnn estimator");
  ev->add_option("--estimators", ev_est, "mp-bsbl, dnn, bomp, ga-mmse")->delimiter(',');
  ev->add_option("--snr", ev_snr, "SNR list in dB for generated data")->delimiter(',');
  ev->add_option("--count", ev_count, "samples per SNR for generated data");

  // sweep
  auto* sw = app.add_subcommand("sweep", "NMSE / UAD versus SNR for several estimators");
  add_common(sw, sweep_c);
  std::vector<double> sw_snr{0.0, 5.0, 10.0, 15.0};
  std::vector<std::string> sw_est{"mp-bsbl", "dnn", "bomp", "ga-mmse"};
  std::size_t sw_samples = 1000;
  std::string sw_weights;
  TrainArgs sw_t;
  sw->add_option("--snr", sw_snr, "SNR list in dB")->delimiter(',');
  sw->add_option("--estimators", sw_est)->delimiter(',');
  sw->add_option("--samples", sw_samples, "test samples per SNR");
  sw->add_option("--weights", sw_weights, "checkpoint for dnn rows; otherwise a network is trained per SNR");
  add_train_options(sw, sw_t);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "compare the analytic gradient with central differences");
  add_common(gc, gc_c);
  GradCheckOptions gopt;
  gc->add_option("--trials", gopt.trials);
  gc->add_option("--params", gopt.params_per_trial, "parameters per trial");
  gc->add_option("--step", gopt.step);
  gc->add_option("--snr", gopt.snr_db);
  gc->add_flag("--perturb", gopt.perturb_weights, "uniform [0.5,1.5] weights instead of all ones");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error kind=UsageError msg=\"" << e.what() << "\"\n";
    return 2;
  }

  if (gen->parsed()) {
    const SystemConfig cfg = resolve_config(gen_c);
    const Topology topo = make_topology(cfg);
    const Dataset ds = generate_dataset(cfg, topo.pilot, gen_snr, gen_count, gen_c.seed);
    if (gen_c.out.empty())
      write_dataset(ds, std::cout);
    else
      write_dataset(ds, gen_c.out);
    return 0;
  }

  if (tr->parsed()) {
    if (train_c.out.empty()) throw UsageError("train: --out checkpoint path is required");
    const SystemConfig cfg = resolve_config(train_c);
    const Topology topo = make_topology(cfg);
    TrainResult res;
    if (targs.data.empty()) {
      res = train_generated(cfg, topo.pilot, targs.snr, targs, train_c.seed);
    } else {
      const Dataset data = read_dataset(targs.data, cfg);
      const Dataset ho = targs.holdout.empty()
                             ? generate_for_training(cfg, topo.pilot, targs.snr, targs.holdout_count,
                                                     targs.mixed, child_seed(train_c.seed, 1001))
                             : read_dataset(targs.holdout, cfg);
      res = train(data, ho, topo.pilot, cfg, make_hyper(targs, train_c.seed));
    }
    save_checkpoint(train_c.out, res.weights, res.opt, cfg);
    write_log(targs.log, res.report);
    if (res.report.aborted) {
      std::cerr << "error kind=NumericalError msg=\"training aborted: " << res.report.abort_reason << "\"\n";
      return 1;
    }
    return 0;
  }

  if (ev->parsed()) {
    const SystemConfig cfg = resolve_config(eval_c);
    const Topology topo = make_topology(cfg);
    const auto ests = parse_estimators(ev_est);
    std::optional<WeightSet> w;
    if (!ev_weights.empty()) w = load_weights(ev_weights, cfg);
    const Dataset ds = ev_data.empty() ? generate_dataset(cfg, topo.pilot, ev_snr, ev_count, eval_c.seed)
                                       : read_dataset(ev_data, cfg);
    // one row group per distinct SNR, in order of first appearance
    std::vector<double> snrs;
    for (const auto& s : ds.samples)
      if (std::find(snrs.begin(), snrs.end(), s.snr_db) == snrs.end()) snrs.push_back(s.snr_db);
    std::vector<EvalRow> rows;
    for (double snr : snrs) {
      std::vector<Scenario> part;
      for (const auto& s : ds.samples)
        if (s.snr_db == snr) part.push_back(s);
      for (Estimator e : ests) {
        EvalRow r = evaluate(e, part, topo.pilot, cfg, w ? &*w : nullptr);
        r.snr_db = snr;
        r.seed = eval_c.seed;
        rows.push_back(std::move(r));
      }
    }
    std::ostringstream csv;
    write_csv(csv, rows);
    emit(eval_c, csv.str());
    return 0;
  }

  if (sw->parsed()) {
    const SystemConfig cfg = resolve_config(sweep_c);
    const Topology topo = make_topology(cfg);
    SweepOptions opt;
    opt.snr_db = sw_snr;
    opt.estimators = parse_estimators(sw_est);
    opt.samples = sw_samples;
    opt.seed = sweep_c.seed;
    WeightProvider provider;
    if (!sw_weights.empty()) {
      const WeightSet w = load_weights(sw_weights, cfg);
      provider = [w](double) { return w; };
    } else {
      // one network per SNR point, or a single mixed-SNR network
      std::optional<WeightSet> shared;
      provider = [&, shared](double snr) mutable {
        if (shared) return *shared;
        const std::vector<double> train_snr = sw_t.mixed ? sw_snr : std::vector<double>{snr};
        std::cerr << "training at " << (sw_t.mixed ? std::string("mixed SNR") : std::to_string(snr) + " dB") << '\n';
        TrainResult res = train_generated(cfg, topo.pilot, train_snr, sw_t, sweep_c.seed);
        if (res.report.aborted) throw NumericalError("training aborted: " + res.report.abort_reason);
        if (sw_t.mixed) shared = res.weights;
        return res.weights;
      };
    }
    const auto rows = sweep_snr(cfg, topo.pilot, opt, provider);
    std::ostringstream csv;
    write_csv(csv, rows);
    emit(sweep_c, csv.str());
    for (const auto& msg : ordering_violations(rows)) std::cerr << "warning ordering " << msg << '\n';
    return 0;
  }

  if (gc->parsed()) {
    const SystemConfig cfg = resolve_config(gc_c);
    gopt.seed = gc_c.seed;
    const GradCheckResult r = grad_check(cfg, gopt);
    std::ostringstream s;
    s << "max_rel_error=" << r.max_rel_error << " checked=" << r.checked << '\n';
    emit(gc_c, s.str());
    return r.max_rel_error < 1e-4 ? 0 : 1;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const nora::UsageError& e) {
    std::cerr << "error kind=UsageError msg=\"" << e.what() << "\"\n";
    return 2;
  } catch (const nora::Error& e) {
    std::cerr << "error kind=" << e.kind() << " msg=\"" << e.what() << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error kind=InternalError msg=\"" << e.what() << "\"\n";
    return 1;
  }
}

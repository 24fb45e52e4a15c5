// SPDX-License-Identifier: Apache-2.0

#include "attnmpc/cli.h"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "attnmpc/closed_loop.h"
#include "attnmpc/dataset.h"
#include "attnmpc/experiment.h"
#include "attnmpc/feeder.h"
#include "attnmpc/model_zoo.h"
#include "attnmpc/selftest.h"
#include "attnmpc/trainer.h"
#include "csv.h"

namespace attnmpc {

namespace {

namespace fs = std::filesystem;

const char* kAccuracyRule =
    "same tap position, same capacitor state after rounding, angle within 2% of its range";

struct RunConfig {
  std::string command;
  std::uint64_t seed = 1;
  std::string out = "out";
  std::string feeder;
  std::string dataset;
  std::string trajectories;
  std::string checkpoint;
  std::vector<std::string> models;
  std::size_t scenarios = kDefaultScenarios;
  std::size_t steps = kDefaultScenarioSteps;
  std::size_t horizon = kDefaultHorizon;
  std::string split = "example";
  TrainConfig train;
  int workers = 1;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

FeederSpec feeder_of(const RunConfig& rc) {
  return rc.feeder.empty() ? default_feeder() : load_feeder(rc.feeder);
}

std::string provenance(const RunConfig& rc) {
  std::string p = fmt::format("attnmpc {} seed={}", rc.command, rc.seed);
  auto field = [&](const char* key, const std::string& v) {
    if (!v.empty()) p += fmt::format(" {}={}", key, v);
  };
  field("feeder", rc.feeder.empty() ? "default" : rc.feeder);
  if (rc.command == "generate") {
    p += fmt::format(" scenarios={} steps={} split={}", rc.scenarios, rc.steps, rc.split);
  }
  field("dataset", rc.dataset);
  field("checkpoint", rc.checkpoint);
  for (const auto& m : rc.models) field("model", m);
  if (rc.command == "train") {
    const TrainConfig& t = rc.train;
    p += fmt::format(" lr={} epochs={} patience={} batch={} repeats={} workers={}",
                     t.learning_rate, t.max_epochs, t.patience, t.batch_size, t.repeats,
                     rc.workers);
  }
  if (rc.command == "closedloop") p += fmt::format(" horizon={}", rc.horizon);
  return p;
}

void require(const std::string& value, const char* flag, const std::string& command) {
  if (value.empty()) throw UsageError(fmt::format("{} requires {}", command, flag));
  if (!fs::exists(value)) throw UsageError(fmt::format("{}: no such file '{}'", flag, value));
}

std::vector<ModelSpec> model_specs(const RunConfig& rc, const Dataset* d) {
  std::vector<ModelSpec> specs;
  const std::vector<std::string> requested =
      rc.models.empty() ? std::vector<std::string>{"all"} : rc.models;
  for (const auto& text : requested) {
    try {
      if (text == "all") {
        for (const auto& s : standard_architectures()) specs.push_back(s);
      } else {
        specs.push_back(parse_model_spec(text));
      }
    } catch (const std::invalid_argument& e) {
      throw UsageError(fmt::format("--model: {}", e.what()));
    }
  }
  if (d != nullptr) {
    for (auto& s : specs) {
      if (s.sequence_length != d->sequence_length) {
        throw UsageError(fmt::format("--model {}: t={} but the dataset was built with t={}",
                                     s.name(), s.sequence_length, d->sequence_length));
      }
    }
  }
  return specs;
}

int cmd_generate(const RunConfig& rc, std::ostream& out) {
  const FeederSpec spec = feeder_of(rc);
  std::size_t t = 2;
  if (!rc.models.empty()) t = model_specs(rc, nullptr).front().sequence_length;
  if (rc.split != "example" && rc.split != "trajectory") {
    throw UsageError(fmt::format("--split must be example or trajectory, got '{}'", rc.split));
  }
  const SplitMode mode = rc.split == "trajectory" ? SplitMode::kTrajectory : SplitMode::kExample;
  fs::create_directories(rc.out);
  const std::string prov = provenance(rc);
  const auto trajectories = generate_scenarios(spec, rc.scenarios, rc.steps, rc.seed);
  save_feeder(spec, (fs::path(rc.out) / "feeder.json").string());
  save_trajectories(spec, trajectories, (fs::path(rc.out) / "scenarios.csv").string(), prov);
  Dataset d = build_dataset(spec, trajectories, t, rc.seed, mode);
  d.provenance = prov;
  const std::string path = (fs::path(rc.out) / "dataset.csv").string();
  serialize_dataset(d, path);
  out << fmt::format("wrote {} scenarios, {} examples (train {} / dev {} / test {}) to {}\n",
                     trajectories.size(), d.examples.size(), d.split.train.size(),
                     d.split.dev.size(), d.split.test.size(), rc.out);
  return kExitOk;
}

int cmd_train(const RunConfig& rc, std::ostream& out) {
  require(rc.dataset, "--dataset", "train");
  const Dataset d = load_dataset(rc.dataset);
  const auto specs = model_specs(rc, &d);
  const std::string prov = provenance(rc);
  const auto results = train_architectures(d, specs, rc.train, rc.seed, rc.workers);
  write_metrics(results, rc.out, prov);
  const EfficiencyReport report = efficiency_report(leaderboard_rows(results));
  save_report(report, (fs::path(rc.out) / "").string(), prov, false);
  for (const auto& r : results) {
    save_checkpoint(r.best_model(), (fs::path(rc.out) / (r.spec.name() + ".ckpt")).string(),
                    prov);
  }
  out << render_report(report, kAccuracyRule);
  return kExitOk;
}

int cmd_eval(const RunConfig& rc, std::ostream& out) {
  require(rc.checkpoint, "--checkpoint", "eval");
  require(rc.dataset, "--dataset", "eval");
  const Model m = load_checkpoint(rc.checkpoint);
  const Dataset d = load_dataset(rc.dataset);
  const Metrics metrics = evaluate_metrics(m, d);
  fs::create_directories(rc.out);
  const std::string path = (fs::path(rc.out) / ("eval_" + m.spec().name() + ".csv")).string();
  std::ofstream f(path);
  if (!f) throw FormatError(fmt::format("cannot write {}", path));
  f << "# " << provenance(rc) << '\n'
    << "model,test_mse,accuracy\n"
    << csv::join({m.spec().name(), csv::num(metrics.test_mse), csv::num(metrics.accuracy)})
    << '\n';
  out << fmt::format("{}: test_mse={:.6e} accuracy={:.4f} eval_seconds={:.4f}\n",
                     m.spec().name(), metrics.test_mse, metrics.accuracy,
                     metrics.eval_seconds);
  return kExitOk;
}

int cmd_closedloop(const RunConfig& rc, std::ostream& out) {
  require(rc.checkpoint, "--checkpoint", "closedloop");
  std::string traj_path = rc.trajectories;
  if (traj_path.empty() && !rc.dataset.empty()) {
    traj_path = (fs::path(rc.dataset).parent_path() / "scenarios.csv").string();
  }
  require(traj_path, "--trajectories (or --dataset next to scenarios.csv)", "closedloop");
  if (rc.horizon < 1) throw UsageError("--horizon must be at least 1");
  const FeederSpec spec = feeder_of(rc);
  const Model m = load_checkpoint(rc.checkpoint);
  const auto logged = load_trajectories(traj_path);
  const auto runs = compare_closed_loop(m, spec, logged, diurnal_profile(rc.horizon));
  fs::create_directories(rc.out);
  const std::string prov = provenance(rc);
  const std::string name = m.spec().name();
  bool failed = false;
  for (const auto& c : runs) {
    save_closed_loop_trace(
        c.baseline, (fs::path(rc.out) / fmt::format("baseline_base{}.csv", c.base.index)).string(),
        prov);
    save_closed_loop_trace(
        c.mpc, (fs::path(rc.out) / fmt::format("closedloop_{}_base{}.csv", name, c.base.index))
                   .string(),
        prov);
    for (const ClosedLoopRun* r : {&c.baseline, &c.mpc}) {
      if (r->failed) {
        failed = true;
        out << fmt::format("base {} {}: failed at step {}: {}\n", c.base.index, r->label,
                           r->failed_step, r->failure);
      }
    }
    out << fmt::format("base {}: baseline {:.6f}  {} {:.6f}\n", c.base.index,
                       c.baseline.mean_efficiency, name, c.mpc.mean_efficiency);
  }
  const std::string path = (fs::path(rc.out) / ("efficiency_" + name + ".csv")).string();
  std::ofstream f(path);
  if (!f) throw FormatError(fmt::format("cannot write {}", path));
  f << "# " << prov << '\n' << "base,model,baseline,mpc\n";
  for (const auto& e : efficiency_rows(runs)) {
    f << csv::join({std::to_string(e.base_index), e.model, csv::num(e.baseline),
                    csv::num(e.mpc)})
      << '\n';
  }
  if (failed) throw TrajectoryError("closed-loop simulation failed", 0);
  return kExitOk;
}

int cmd_report(const RunConfig& rc, std::ostream& out) {
  const fs::path dir(rc.out);
  require((dir / "leaderboard.csv").string(), "--out containing leaderboard.csv", "report");
  EfficiencyReport base = load_report((dir / "").string());
  std::vector<LeaderboardRow> rows = base.leaderboard;

  // Mean wall-times per model from timing.csv when present.
  if (fs::exists(dir / "timing.csv")) {
    const csv::Table timing = csv::read_table((dir / "timing.csv").string());
    const auto idx = timing.column_index();
    std::map<std::string, std::pair<double, double>> sums;
    std::map<std::string, int> counts;
    for (std::size_t i = 0; i < timing.rows.size(); ++i) {
      const auto& f = timing.rows[i];
      const std::string where = fmt::format("timing.csv:{}", timing.line_numbers[i]);
      auto& s = sums[f[idx.at("model")]];
      s.first += csv::parse_double(f[idx.at("train_seconds")], where);
      s.second += csv::parse_double(f[idx.at("eval_seconds")], where);
      ++counts[f[idx.at("model")]];
    }
    for (auto& row : rows) {
      if (counts.contains(row.model)) {
        row.train_seconds = sums[row.model].first / counts[row.model];
        row.eval_seconds = sums[row.model].second / counts[row.model];
      }
    }
  }

  std::vector<EfficiencyRow> effs;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string fname = entry.path().filename().string();
    if (fname.starts_with("efficiency_") && fname.ends_with(".csv")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const csv::Table t = csv::read_table(p.string());
    const auto idx = t.column_index();
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& f = t.rows[i];
      const std::string where = fmt::format("{}:{}", p.string(), t.line_numbers[i]);
      effs.push_back({static_cast<std::size_t>(csv::parse_double(f[idx.at("base")], where)),
                      f[idx.at("model")], csv::parse_double(f[idx.at("baseline")], where),
                      csv::parse_double(f[idx.at("mpc")], where)});
    }
  }
  const EfficiencyReport report = efficiency_report(std::move(rows), std::move(effs));
  const std::string text = render_report(report, kAccuracyRule);
  std::ofstream f(dir / "report.txt");
  if (!f) throw FormatError("cannot write report.txt");
  f << "# " << provenance(rc) << '\n' << text;
  save_report(report, (dir / "report_").string(), provenance(rc), true);
  out << text;
  return kExitOk;
}

int cmd_selftest(const RunConfig& rc, std::ostream& out) {
  const auto checks = run_selftest(rc.seed);
  bool ok = true;
  for (const auto& c : checks) {
    out << fmt::format("{} {} ({:.3e} <= {:.1e})\n", c.passed ? "PASS" : "FAIL", c.name,
                       c.value, c.limit);
    ok = ok && c.passed;
  }
  if (!ok) throw NumericalError("selftest failures");
  return kExitOk;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  CLI::App app{"Attention-based MPC surrogate toolkit for a distribution feeder", "attnmpc"};
  app.set_config("--config", "", "Config file (TOML/INI); command-line flags take precedence");
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--seed", rc.seed, "Master seed");
  app.add_option("--out", rc.out, "Output directory");
  app.add_option("--feeder", rc.feeder, "Feeder JSON (default: built-in six-bus feeder)");
  app.add_option("--dataset", rc.dataset, "Dataset CSV (with .meta.json sidecar)");
  app.add_option("--trajectories", rc.trajectories, "Scenario CSV for the reference policy");
  app.add_option("--checkpoint", rc.checkpoint, "Model checkpoint");
  app.add_option("--model", rc.models,
                 "all | CATEGORY-CELL | category=..,cell=..,t=..,hidden=..,dk=..,heads=..,layers=..");
  app.add_option("--epochs", rc.train.max_epochs, "Maximum training epochs");
  app.add_option("--lr", rc.train.learning_rate, "Initial learning rate");
  app.add_option("--patience", rc.train.patience, "Early-stopping patience");
  app.add_option("--batch-size", rc.train.batch_size, "Mini-batch size");
  app.add_option("--repeats", rc.train.repeats, "Seeded runs averaged per model");
  app.add_option("--scenarios", rc.scenarios, "Scenarios to generate");
  app.add_option("--steps", rc.steps, "Steps per scenario");
  app.add_option("--horizon", rc.horizon, "Closed-loop steps");
  app.add_option("--split", rc.split, "example | trajectory");
  app.add_option("--workers", rc.workers, "Training threads");

  const std::map<std::string, std::string> commands = {
      {"generate", "Simulate scenarios and write the dataset"},
      {"train", "Train models and write metrics, checkpoints and leaderboard"},
      {"eval", "Evaluate a checkpoint on a dataset's test split"},
      {"closedloop", "Run a checkpoint as MPC on the three base control models"},
      {"report", "Render the leaderboard and efficiency tables"},
      {"selftest", "Gradient, attention and simulator self-checks"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  auto status = [&](const char* kind, const std::string& detail) {
    out << fmt::format("status={} command={}{}\n", kind,
                       rc.command.empty() ? "none" : rc.command,
                       detail.empty() ? "" : " message=\"" + detail + "\"");
  };

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    status("ok", "");
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    status("usage_error", e.what());
    return kExitUsage;
  }
  for (auto* sub : app.get_subcommands()) rc.command = sub->get_name();

  try {
    validate_train_config(rc.train);
    if (rc.workers < 1) throw UsageError("--workers must be at least 1");
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    status("usage_error", e.what());
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    status("usage_error", e.what());
    return kExitUsage;
  }

  try {
    int code = kExitOk;
    if (rc.command == "generate") code = cmd_generate(rc, out);
    else if (rc.command == "train") code = cmd_train(rc, out);
    else if (rc.command == "eval") code = cmd_eval(rc, out);
    else if (rc.command == "closedloop") code = cmd_closedloop(rc, out);
    else if (rc.command == "report") code = cmd_report(rc, out);
    else if (rc.command == "selftest") code = cmd_selftest(rc, out);
    status("ok", "");
    return code;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    status("usage_error", e.what());
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    status("numerical_failure", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    status("usage_error", e.what());
    return kExitUsage;
  }
}

}  // namespace attnmpc

// SPDX-License-Identifier: Apache-2.0

#include "attnmpc/closed_loop.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "csv.h"

namespace attnmpc {

ControlVector clamp_controls(const RawControls& raw, const ControlLimits& limits) {
  static constexpr const char* kNames[3] = {"tap", "capacitor", "pv_angle"};
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i])) {
      throw NumericalError(fmt::format("non-finite {} control: {}", kNames[i], raw[i]));
    }
  }
  ControlVector u;
  u.tap = limits.tap_at(limits.tap_position(raw[0]));
  u.capacitor = raw[1] >= 0.5;
  u.pv_angle = std::clamp(raw[2], 0.0, limits.max_angle);
  return u;
}

std::vector<BaseControlModel> default_base_models(const FeederSpec& spec) {
  const ControlLimits limits = control_limits(spec);
  const double angle = std::min(10.0 * std::numbers::pi / 180.0, limits.max_angle);
  auto tap = [&](double v) { return limits.tap_at(limits.tap_position(v)); };
  return {{0, {tap(1.00), false, angle}},
          {1, {tap(0.95), true, angle}},
          {2, {tap(1.05), false, angle}}};
}

BestStateReference::BestStateReference(std::vector<Trajectory> logged, double tolerance)
    : tolerance_(tolerance) {
  for (auto& traj : logged) {
    for (auto& s : traj) steps_.push_back(std::move(s));
  }
  if (steps_.empty()) throw std::invalid_argument("reference policy needs logged steps");
}

const TrajectoryStep& BestStateReference::select(const LoadCondition& c) const {
  const TrajectoryStep* best = nullptr;
  const TrajectoryStep* nearest = nullptr;
  double nearest_dist = std::numeric_limits<double>::infinity();
  for (const TrajectoryStep& s : steps_) {
    const double dl = s.condition.load - c.load;
    const double di = s.condition.irradiance - c.irradiance;
    if (std::abs(dl) <= tolerance_ && std::abs(di) <= tolerance_) {
      if (best == nullptr || s.efficiency > best->efficiency) best = &s;
    }
    const double dist = dl * dl + di * di;
    if (dist < nearest_dist) {
      nearest_dist = dist;
      nearest = &s;
    }
  }
  return best != nullptr ? *best : *nearest;
}

StateVector BestStateReference::operator()(const LoadCondition& c, std::size_t) const {
  return select(c).state;
}

Controller model_controller(const Model& m) {
  return [&m](const ControlVector& u_prev, const std::vector<StateVector>& states,
              std::size_t) {
    NoGradGuard no_grad;
    const Tensor y = predict_controls(m, u_prev, states);
    const EncodedControls decoded = m.codec.decode({y.at(0, 0), y.at(0, 1), y.at(0, 2)});
    return RawControls{decoded[0], decoded[1], decoded[2]};
  };
}

namespace {

void record(ClosedLoopRun& run, const FeederSpec& spec, const ControlVector& u,
            const LoadCondition& c) {
  const PowerFlowSolution sol = solve_power_flow(spec, u, c);
  run.controls.push_back(u);
  run.states.push_back(observe_state(spec, sol));
  run.efficiency.push_back(compute_efficiency(sol));
}

void finish(ClosedLoopRun& run) {
  run.mean_efficiency = 0.0;
  for (double e : run.efficiency) run.mean_efficiency += e;
  if (!run.efficiency.empty()) run.mean_efficiency /= static_cast<double>(run.efficiency.size());
}

}  // namespace

ClosedLoopRun run_closed_loop(const Controller& controller, std::size_t sequence_length,
                              const BaseControlModel& base, const FeederSpec& spec,
                              const ReferencePolicy& reference,
                              const std::vector<LoadCondition>& profile,
                              const std::string& label) {
  if (profile.empty()) throw std::invalid_argument("closed loop horizon must be at least 1");
  if (sequence_length < 1) throw std::invalid_argument("sequence length must be at least 1");
  const ControlLimits limits = control_limits(spec);
  ClosedLoopRun run;
  run.base_index = base.index;
  run.label = label;
  std::size_t i = 0;
  try {
    record(run, spec, clamp_controls({base.initial.tap, base.initial.capacitor ? 1.0 : 0.0,
                                      base.initial.pv_angle},
                                     limits),
           profile[0]);
    for (i = 1; i < profile.size(); ++i) {
      std::vector<StateVector> window;
      for (std::size_t k = sequence_length - 1; k >= 1; --k) {
        window.push_back(run.states[i >= k ? i - k : 0]);
      }
      window.push_back(reference(profile[i], i));
      const std::size_t first = i >= sequence_length - 1 ? i - (sequence_length - 1) : 0;
      const ControlVector& u_prev = run.controls[std::min(first, i - 1)];
      record(run, spec, clamp_controls(controller(u_prev, window, i), limits), profile[i]);
    }
  } catch (const NumericalError& e) {
    run.failed = true;
    run.failed_step = i;
    run.failure = e.what();
  }
  finish(run);
  return run;
}

ClosedLoopRun run_closed_loop(const Model& m, const BaseControlModel& base,
                              const FeederSpec& spec, const ReferencePolicy& reference,
                              const std::vector<LoadCondition>& profile) {
  return run_closed_loop(model_controller(m), m.spec().sequence_length, base, spec,
                         reference, profile, m.spec().name());
}

ClosedLoopRun run_baseline(const BaseControlModel& base, const FeederSpec& spec,
                           const std::vector<LoadCondition>& profile) {
  const RawControls fixed{base.initial.tap, base.initial.capacitor ? 1.0 : 0.0,
                          base.initial.pv_angle};
  auto hold = [fixed](const ControlVector&, const std::vector<StateVector>&, std::size_t) {
    return fixed;
  };
  auto no_reference = [](const LoadCondition&, std::size_t) { return StateVector{}; };
  return run_closed_loop(hold, 1, base, spec, no_reference, profile, "baseline");
}

void save_closed_loop_trace(const ClosedLoopRun& run, const std::string& path,
                            const std::string& provenance) {
  std::ofstream out(path);
  if (!out) throw FormatError(fmt::format("cannot write {}", path));
  if (!provenance.empty()) out << "# " << provenance << '\n';
  if (run.failed) out << "# failed at step " << run.failed_step << ": " << run.failure << '\n';
  out << "step,tap,capacitor,pv_angle,efficiency\n";
  for (std::size_t k = 0; k < run.efficiency.size(); ++k) {
    const ControlVector& u = run.controls[k];
    out << csv::join({std::to_string(k), csv::num(u.tap), u.capacitor ? "1" : "0",
                      csv::num(u.pv_angle), csv::num(run.efficiency[k])})
        << '\n';
  }
}

namespace {

// "AM_simple-LSTM" -> {"AM_simple", "LSTM"}
std::pair<std::string, std::string> split_model_name(const std::string& name) {
  const auto dash = name.rfind('-');
  if (dash == std::string::npos) return {name, ""};
  return {name.substr(0, dash), name.substr(dash + 1)};
}

}  // namespace

EfficiencyReport efficiency_report(std::vector<LeaderboardRow> rows,
                                   std::vector<EfficiencyRow> efficiencies) {
  if (rows.empty()) throw std::invalid_argument("efficiency_report: no evaluated models");
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.test_mse < b.test_mse;
  });
  EfficiencyReport r;
  r.leaderboard = std::move(rows);
  r.efficiencies = std::move(efficiencies);
  for (const LeaderboardRow& row : r.leaderboard) {
    const auto [category, cell] = split_model_name(row.model);
    if (category == "B") continue;
    const std::string reference = "B-" + cell;
    auto it = std::find_if(r.leaderboard.begin(), r.leaderboard.end(),
                           [&](const LeaderboardRow& x) { return x.model == reference; });
    if (it == r.leaderboard.end() || !(it->test_mse > 0)) continue;
    r.reductions.push_back({row.model, reference, (it->test_mse - row.test_mse) / it->test_mse});
  }
  return r;
}

std::string render_report(const EfficiencyReport& r, const std::string& accuracy_rule) {
  std::string out = "Leaderboard (sorted by test loss)\n";
  out += fmt::format("{:<16} {:>12} {:>9} {:>12} {:>11} {:>7}\n", "model", "test_mse",
                     "accuracy", "train_s", "eval_s", "epochs");
  for (const auto& row : r.leaderboard) {
    out += fmt::format("{:<16} {:>12.4e} {:>9.4f} {:>12.2f} {:>11.4f} {:>7}\n", row.model,
                       row.test_mse, row.accuracy, row.train_seconds, row.eval_seconds,
                       row.epochs);
  }
  if (!accuracy_rule.empty()) out += "accuracy: " + accuracy_rule + "\n";
  if (!r.reductions.empty()) {
    out += "\nTest loss change vs Category B (positive = lower loss)\n";
    for (const auto& red : r.reductions) {
      out += fmt::format("{:<16} vs {:<10} {:>+8.1f}%\n", red.model, red.reference,
                         100.0 * red.fraction);
    }
  }
  if (!r.efficiencies.empty()) {
    out += "\nClosed-loop mean efficiency\n";
    out += fmt::format("{:<6} {:<16} {:>10} {:>10} {:>10}\n", "base", "model", "baseline",
                       "mpc", "delta");
    for (const auto& e : r.efficiencies) {
      out += fmt::format("{:<6} {:<16} {:>10.6f} {:>10.6f} {:>+10.6f}\n", e.base_index,
                         e.model, e.baseline, e.mpc, e.mpc - e.baseline);
    }
  }
  return out;
}

void save_report(const EfficiencyReport& r, const std::string& prefix,
                 const std::string& provenance, bool include_timing) {
  {
    std::ofstream out(prefix + "leaderboard.csv");
    if (!out) throw FormatError(fmt::format("cannot write {}leaderboard.csv", prefix));
    if (!provenance.empty()) out << "# " << provenance << '\n';
    out << (include_timing ? "model,test_mse,accuracy,epochs,train_seconds,eval_seconds\n"
                           : "model,test_mse,accuracy,epochs\n");
    for (const auto& row : r.leaderboard) {
      std::vector<std::string> f{row.model, csv::num(row.test_mse), csv::num(row.accuracy),
                                 std::to_string(row.epochs)};
      if (include_timing) {
        f.push_back(csv::num(row.train_seconds));
        f.push_back(csv::num(row.eval_seconds));
      }
      out << csv::join(f) << '\n';
    }
  }
  std::ofstream out(prefix + "efficiency.csv");
  if (!out) throw FormatError(fmt::format("cannot write {}efficiency.csv", prefix));
  if (!provenance.empty()) out << "# " << provenance << '\n';
  out << "base,model,baseline,mpc\n";
  for (const auto& e : r.efficiencies) {
    out << csv::join({std::to_string(e.base_index), e.model, csv::num(e.baseline),
                      csv::num(e.mpc)})
        << '\n';
  }
}

EfficiencyReport load_report(const std::string& prefix) {
  const std::string board_path = prefix + "leaderboard.csv";
  const csv::Table board = csv::read_table(board_path);
  const auto idx = board.column_index();
  for (const char* col : {"model", "test_mse", "accuracy", "epochs"}) {
    if (!idx.contains(col)) {
      throw FormatError(fmt::format("{}:1: missing column '{}'", board_path, col));
    }
  }
  std::vector<LeaderboardRow> rows;
  for (std::size_t i = 0; i < board.rows.size(); ++i) {
    const auto& f = board.rows[i];
    const std::string where = fmt::format("{}:{}", board_path, board.line_numbers[i]);
    LeaderboardRow row;
    row.model = f[idx.at("model")];
    row.test_mse = csv::parse_double(f[idx.at("test_mse")], where);
    row.accuracy = csv::parse_double(f[idx.at("accuracy")], where);
    row.epochs = static_cast<int>(csv::parse_double(f[idx.at("epochs")], where));
    if (idx.contains("train_seconds")) {
      row.train_seconds = csv::parse_double(f[idx.at("train_seconds")], where);
    }
    if (idx.contains("eval_seconds")) {
      row.eval_seconds = csv::parse_double(f[idx.at("eval_seconds")], where);
    }
    rows.push_back(std::move(row));
  }
  const std::string eff_path = prefix + "efficiency.csv";
  const csv::Table eff = csv::read_table(eff_path);
  const auto eidx = eff.column_index();
  for (const char* col : {"base", "model", "baseline", "mpc"}) {
    if (!eidx.contains(col)) {
      throw FormatError(fmt::format("{}:1: missing column '{}'", eff_path, col));
    }
  }
  std::vector<EfficiencyRow> effs;
  for (std::size_t i = 0; i < eff.rows.size(); ++i) {
    const auto& f = eff.rows[i];
    const std::string where = fmt::format("{}:{}", eff_path, eff.line_numbers[i]);
    effs.push_back({static_cast<std::size_t>(csv::parse_double(f[eidx.at("base")], where)),
                    f[eidx.at("model")], csv::parse_double(f[eidx.at("baseline")], where),
                    csv::parse_double(f[eidx.at("mpc")], where)});
  }
  return efficiency_report(std::move(rows), std::move(effs));
}

}  // namespace attnmpc

// SPDX-License-Identifier: Apache-2.0
//
// A trained model used as a one-step MPC on the feeder, fixed-control
// baselines, and the leaderboard / efficiency report.

#ifndef ATTNMPC_CLOSED_LOOP_H_
#define ATTNMPC_CLOSED_LOOP_H_

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "attnmpc/feeder.h"
#include "attnmpc/model_zoo.h"
#include "attnmpc/trainer.h"

namespace attnmpc {

using RawControls = std::array<double, 3>;  // tap, capacitor, angle (decoded)

// Clamps the tap to [tap_min, tap_max] and snaps it to the nearest position,
// rounds the capacitor to {0, 1} and clamps the angle to [0, max_angle].
// Throws NumericalError naming the first non-finite component.
ControlVector clamp_controls(const RawControls& raw, const ControlLimits& limits);

struct BaseControlModel {
  std::size_t index = 0;
  ControlVector initial;
};

// Shared 10 degree angle; tap/capacitor of 1.00/off, 0.95/on and 1.05/off.
std::vector<BaseControlModel> default_base_models(const FeederSpec& spec);

// Desired state for a step given its load condition.
using ReferencePolicy = std::function<StateVector(const LoadCondition&, std::size_t step)>;

// Picks, among logged steps whose load and irradiance are both within
// tolerance of the query, the one with the highest efficiency. With no match
// it falls back to the nearest step in (load, irradiance).
class BestStateReference {
 public:
  BestStateReference(std::vector<Trajectory> logged, double tolerance = 0.05);
  StateVector operator()(const LoadCondition& c, std::size_t step) const;
  const TrajectoryStep& select(const LoadCondition& c) const;

 private:
  std::vector<TrajectoryStep> steps_;
  double tolerance_;
};

// Raw controls for step i from the previous control and the state window
// (t-1 observed states followed by the desired state).
using Controller = std::function<RawControls(const ControlVector& u_prev,
                                             const std::vector<StateVector>& states,
                                             std::size_t step)>;

Controller model_controller(const Model& m);

struct ClosedLoopRun {
  std::size_t base_index = 0;
  std::string label;
  std::vector<double> efficiency;  // step 0 runs under the base controls
  std::vector<ControlVector> controls;
  std::vector<StateVector> states;
  double mean_efficiency = 0.0;
  bool failed = false;
  std::size_t failed_step = 0;
  std::string failure;
};

// Runs the loop for profile.size() steps. A simulator failure stops the run
// and is recorded in failed / failed_step / failure.
ClosedLoopRun run_closed_loop(const Controller& controller, std::size_t sequence_length,
                              const BaseControlModel& base, const FeederSpec& spec,
                              const ReferencePolicy& reference,
                              const std::vector<LoadCondition>& profile,
                              const std::string& label = "mpc");

ClosedLoopRun run_closed_loop(const Model& m, const BaseControlModel& base,
                              const FeederSpec& spec, const ReferencePolicy& reference,
                              const std::vector<LoadCondition>& profile);

// Base controls held for every step.
ClosedLoopRun run_baseline(const BaseControlModel& base, const FeederSpec& spec,
                           const std::vector<LoadCondition>& profile);

inline constexpr std::size_t kDefaultHorizon = 50;

void save_closed_loop_trace(const ClosedLoopRun& run, const std::string& path,
                            const std::string& provenance);

struct LeaderboardRow {
  std::string model;  // e.g. "AM_simple-LSTM"
  double test_mse = 0.0;
  double accuracy = 0.0;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  int epochs = 0;
};

struct EfficiencyRow {
  std::size_t base_index = 0;
  std::string model;
  double baseline = 0.0;
  double mpc = 0.0;
};

// Test-loss reduction of a model relative to the Category B model with the
// same cell: (loss_B - loss) / loss_B.
struct Reduction {
  std::string model;
  std::string reference;
  double fraction = 0.0;
};

struct EfficiencyReport {
  std::vector<LeaderboardRow> leaderboard;  // ascending test loss
  std::vector<EfficiencyRow> efficiencies;
  std::vector<Reduction> reductions;
};

// Throws std::invalid_argument with no rows.
EfficiencyReport efficiency_report(std::vector<LeaderboardRow> rows,
                                   std::vector<EfficiencyRow> efficiencies = {});

std::string render_report(const EfficiencyReport& r, const std::string& accuracy_rule);

// Writes <prefix>leaderboard.csv and <prefix>efficiency.csv. Timing columns
// are optional so the files can stay byte-stable across re-runs.
void save_report(const EfficiencyReport& r, const std::string& prefix,
                 const std::string& provenance, bool include_timing = true);
EfficiencyReport load_report(const std::string& prefix);

}  // namespace attnmpc

#endif  // ATTNMPC_CLOSED_LOOP_H_

// SPDX-License-Identifier: Apache-2.0
//
// Quasi-static radial distribution feeder with three controls: a regulator
// tap, a switched capacitor bank and the phase angle of a PV inverter.
// Everything internal is per-unit on the feeder's base MVA.

#ifndef ATTNMPC_FEEDER_H_
#define ATTNMPC_FEEDER_H_

#include <complex>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "attnmpc/errors.h"

namespace attnmpc {

struct Bus {
  std::string id;
  double load_mw = 0.0;
  double load_mvar = 0.0;
};

// Series branch between two buses, impedance in per-unit.
struct Line {
  std::size_t from = 0;
  std::size_t to = 0;
  double r = 0.0;
  double x = 0.0;
};

// Ideal ratio transformer at the sending end of one line.
struct Regulator {
  std::size_t line = 0;
  double tap_min = 0.90;
  double tap_max = 1.10;
  int positions = 33;

  double step() const { return (tap_max - tap_min) / (positions - 1); }
};

struct CapacitorBank {
  std::size_t bus = 0;
  double rating_mvar = 0.0;  // at 1 pu voltage
};

// Voltage-source inverter behind a coupling reactance. With bus voltage V and
// internal source E leading by delta:
//   P = E V sin(delta) / X,  Q = (E V cos(delta) - V^2) / X.
struct PvUnit {
  std::size_t bus = 0;
  double source_voltage = 1.0;
  double coupling_reactance = 1.7;
  double max_angle = 0.5235987755982988;  // 30 degrees
  double rated_mw = 1.5;                  // output at nominal angle, 1 pu
};

struct FeederSpec {
  double base_mva = 10.0;
  double base_kv = 12.47;
  double slack_voltage = 1.0;
  std::vector<Bus> buses;  // bus 0 is the substation
  std::vector<Line> lines;
  Regulator regulator;
  CapacitorBank capacitor;
  PvUnit pv;
  // Buses whose voltage magnitude appears in the state vector.
  std::vector<std::size_t> monitored;
};

// Six-bus radial line calibrated to 5.734 MW / 2.650 MVAr of load, a
// 1.6 MVAr capacitor and a 1.5 MW PV unit.
FeederSpec default_feeder();

// Throws std::invalid_argument when the feeder is not a connected radial tree
// rooted at bus 0 or any device references a missing element.
void validate_feeder(const FeederSpec& spec);

FeederSpec load_feeder(const std::string& path);
void save_feeder(const FeederSpec& spec, const std::string& path);

struct ControlLimits {
  double tap_min = 0.90;
  double tap_max = 1.10;
  int tap_positions = 33;
  double max_angle = 0.5235987755982988;

  double tap_step() const { return (tap_max - tap_min) / (tap_positions - 1); }
  int tap_position(double tap) const;
  double tap_at(int position) const;
};

ControlLimits control_limits(const FeederSpec& spec);

struct ControlVector {
  double tap = 1.0;
  bool capacitor = false;
  double pv_angle = 0.0;  // radians

  bool operator==(const ControlVector&) const = default;
};

// Tap 1.00, capacitor in service, PV angle that yields the rated output at
// 1 pu voltage.
ControlVector nominal_controls(const FeederSpec& spec);

// Load and irradiance for one quasi-static step. Per-bus multipliers, when
// present, replace the uniform load multiplier.
struct LoadCondition {
  double load = 1.0;
  double irradiance = 1.0;
  std::vector<double> bus_load;

  double bus_multiplier(std::size_t bus) const {
    return bus_load.empty() ? load : bus_load[bus];
  }
};

struct StateVector {
  std::vector<double> voltages;  // per-unit magnitude at monitored buses
  double head_p = 0.0;
  double head_q = 0.0;
  double pv_p = 0.0;

  std::vector<double> features() const;
  static StateVector from_features(const std::vector<double>& f);
  bool operator==(const StateVector&) const = default;
};

std::vector<std::string> state_feature_names(const FeederSpec& spec);

struct PowerFlowSolution {
  std::vector<std::complex<double>> voltages;
  // Receiving-side current and sending-end complex power of every line.
  std::vector<std::complex<double>> line_currents;
  std::vector<std::complex<double>> line_flows;
  std::complex<double> head_power;
  double pv_p = 0.0;
  double pv_q = 0.0;
  double generation = 0.0;  // slack + PV real power
  double load = 0.0;
  double losses = 0.0;
  double max_mismatch = 0.0;
  bool converged = false;
  int iterations = 0;
};

inline constexpr int kMaxPowerFlowIterations = 100;
inline constexpr double kPowerFlowTolerance = 1e-10;

// Forward-backward sweep on the radial tree. Throws DivergedError when the
// per-bus power mismatch is not below tolerance within the iteration limit
// and InfeasibleError when any voltage drops below 0.5 pu.
PowerFlowSolution solve_power_flow(const FeederSpec& spec,
                                   const ControlVector& u,
                                   const LoadCondition& condition = {});

// Delivered load / (load + losses).
double compute_efficiency(const PowerFlowSolution& sol);

StateVector observe_state(const FeederSpec& spec, const PowerFlowSolution& sol);

struct TrajectoryStep {
  StateVector state;
  ControlVector control;
  LoadCondition condition;
  double efficiency = 0.0;
};

using Trajectory = std::vector<TrajectoryStep>;

Trajectory simulate_trajectory(const FeederSpec& spec,
                               const std::vector<ControlVector>& controls,
                               const std::vector<LoadCondition>& profiles);

// Smooth one-day load and clear-sky irradiance curve starting at midnight,
// uniform multipliers only.
std::vector<LoadCondition> diurnal_profile(std::size_t steps, double load_scale = 0.9,
                                           double sun_peak = 0.8);

inline constexpr std::size_t kDefaultScenarios = 26;
inline constexpr std::size_t kDefaultScenarioSteps = 155;

std::vector<Trajectory> generate_scenarios(const FeederSpec& spec,
                                           std::size_t n_scenarios,
                                           std::size_t steps,
                                           std::uint64_t seed);

// Tabular export: one row per (scenario, step).
void save_trajectories(const FeederSpec& spec,
                       const std::vector<Trajectory>& trajectories,
                       const std::string& path, const std::string& provenance);
std::vector<Trajectory> load_trajectories(const std::string& path);

}  // namespace attnmpc

#endif  // ATTNMPC_FEEDER_H_

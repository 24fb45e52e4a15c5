// SPDX-License-Identifier: Apache-2.0

#include "attnmpc/feeder.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <queue>
#include <stdexcept>

#include <fmt/format.h>

#include "attnmpc/rng.h"
#include "csv.h"
#include "json.hpp"

namespace attnmpc {

namespace {

using Complex = std::complex<double>;
constexpr Complex kJ{0.0, 1.0};

// Tree view of a validated feeder.
struct Topology {
  std::vector<std::size_t> order;  // breadth-first from the root
  std::vector<std::optional<std::size_t>> parent_line;
  std::vector<std::vector<std::size_t>> child_lines;
};

Topology build_topology(const FeederSpec& spec) {
  const std::size_t n = spec.buses.size();
  if (n == 0) throw std::invalid_argument("feeder has no buses");
  if (spec.lines.size() != n - 1) {
    throw std::invalid_argument(fmt::format(
        "radial feeder with {} buses needs {} lines, found {}", n, n - 1,
        spec.lines.size()));
  }
  Topology topo;
  topo.parent_line.assign(n, std::nullopt);
  topo.child_lines.assign(n, {});
  for (std::size_t k = 0; k < spec.lines.size(); ++k) {
    const Line& line = spec.lines[k];
    if (line.from >= n || line.to >= n || line.from == line.to) {
      throw std::invalid_argument(fmt::format("line {} has invalid ends", k));
    }
    if (line.to == 0) {
      throw std::invalid_argument(fmt::format("line {} feeds the substation", k));
    }
    if (topo.parent_line[line.to]) {
      throw std::invalid_argument(
          fmt::format("bus {} is fed by more than one line", line.to));
    }
    if (std::hypot(line.r, line.x) <= 0.0 || line.r < 0.0) {
      throw std::invalid_argument(fmt::format("line {} has invalid impedance", k));
    }
    topo.parent_line[line.to] = k;
    topo.child_lines[line.from].push_back(k);
  }
  std::vector<bool> reached(n, false);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  reached[0] = true;
  while (!frontier.empty()) {
    const std::size_t bus = frontier.front();
    frontier.pop();
    topo.order.push_back(bus);
    for (std::size_t k : topo.child_lines[bus]) {
      const std::size_t to = spec.lines[k].to;
      if (reached[to]) throw std::invalid_argument("feeder contains a loop");
      reached[to] = true;
      frontier.push(to);
    }
  }
  if (topo.order.size() != n) {
    throw std::invalid_argument("feeder is not connected to the substation");
  }
  return topo;
}

double pv_multiplier(const LoadCondition& c) { return std::max(0.0, c.irradiance); }

// PV injection at bus voltage magnitude v; irradiance scales the coupling
// admittance so that no power is exchanged in the dark.
Complex pv_injection(const PvUnit& pv, double angle, double v, double irradiance) {
  const double y = irradiance / pv.coupling_reactance;
  return {y * pv.source_voltage * v * std::sin(angle),
          y * (pv.source_voltage * v * std::cos(angle) - v * v)};
}

struct Sweep {
  const FeederSpec& spec;
  const Topology& topo;
  const ControlVector& u;
  const LoadCondition& condition;
  std::vector<Complex> load;  // constant-power consumption per bus
  double susceptance = 0.0;

  double ratio(std::size_t line) const {
    return line == spec.regulator.line ? u.tap : 1.0;
  }

  // Net current drawn from the network at every bus.
  std::vector<Complex> bus_currents(const std::vector<Complex>& v) const {
    std::vector<Complex> current(v.size());
    for (std::size_t b = 0; b < v.size(); ++b) {
      current[b] = std::conj(load[b] / v[b]);
    }
    // The shunt admittance jB draws a leading current.
    if (u.capacitor) current[spec.capacitor.bus] += kJ * susceptance * v[spec.capacitor.bus];
    const std::size_t pb = spec.pv.bus;
    const Complex s_pv =
        pv_injection(spec.pv, u.pv_angle, std::abs(v[pb]), pv_multiplier(condition));
    current[pb] -= std::conj(s_pv / v[pb]);
    return current;
  }

  // Receiving-side line currents implied by the voltages.
  std::vector<Complex> line_currents(const std::vector<Complex>& v) const {
    std::vector<Complex> j(spec.lines.size());
    for (std::size_t k = 0; k < spec.lines.size(); ++k) {
      const Line& line = spec.lines[k];
      j[k] = (ratio(k) * v[line.from] - v[line.to]) / Complex(line.r, line.x);
    }
    return j;
  }

  // Largest |V conj(KCL residual)| over non-slack buses.
  double mismatch(const std::vector<Complex>& v) const {
    const auto current = bus_currents(v);
    const auto j = line_currents(v);
    double worst = 0.0;
    for (std::size_t b = 1; b < v.size(); ++b) {
      Complex residual = j[*topo.parent_line[b]] - current[b];
      for (std::size_t k : topo.child_lines[b]) residual -= ratio(k) * j[k];
      worst = std::max(worst, std::abs(v[b] * std::conj(residual)));
    }
    return worst;
  }
};

}  // namespace

FeederSpec default_feeder() {
  FeederSpec spec;
  spec.base_mva = 10.0;
  spec.base_kv = 12.47;
  spec.slack_voltage = 1.0;
  spec.buses = {
      {"1", 0.0, 0.0},   {"2", 1.20, 0.55}, {"3", 1.30, 0.60},
      {"4", 1.234, 0.50}, {"5", 1.00, 0.50}, {"6", 1.00, 0.50},
  };
  spec.lines = {
      {0, 1, 0.020, 0.030},  // regulator leakage
      {1, 2, 0.110, 0.020},
      {2, 3, 0.110, 0.020},
      {3, 4, 0.110, 0.020},
      {4, 5, 0.110, 0.020},
  };
  spec.regulator = {0, 0.90, 1.10, 33};
  spec.capacitor = {3, 1.6};
  spec.pv = PvUnit{};
  spec.pv.bus = 5;
  spec.monitored = {1, 2, 3, 4, 5};
  return spec;
}

void validate_feeder(const FeederSpec& spec) {
  build_topology(spec);
  const std::size_t n = spec.buses.size();
  if (!(spec.base_mva > 0)) throw std::invalid_argument("base MVA must be positive");
  if (spec.regulator.line >= spec.lines.size()) {
    throw std::invalid_argument("regulator references a missing line");
  }
  if (spec.regulator.positions < 2 ||
      !(spec.regulator.tap_min < spec.regulator.tap_max)) {
    throw std::invalid_argument("regulator tap range is empty");
  }
  if (spec.capacitor.bus >= n || spec.capacitor.bus == 0) {
    throw std::invalid_argument("capacitor must sit on a non-slack bus");
  }
  if (spec.pv.bus >= n || spec.pv.bus == 0) {
    throw std::invalid_argument("PV unit must sit on a non-slack bus");
  }
  if (!(spec.pv.coupling_reactance > 0) || !(spec.pv.max_angle > 0) ||
      spec.pv.max_angle >= std::numbers::pi / 2) {
    throw std::invalid_argument("PV coupling reactance or angle limit invalid");
  }
  if (spec.monitored.empty()) throw std::invalid_argument("no monitored buses");
  for (std::size_t b : spec.monitored) {
    if (b >= n) throw std::invalid_argument("monitored bus out of range");
  }
}

FeederSpec load_feeder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open feeder file {}", path));
  nlohmann::json j;
  try {
    in >> j;
    FeederSpec spec;
    spec.base_mva = j.at("base_mva").get<double>();
    spec.base_kv = j.at("base_kv").get<double>();
    spec.slack_voltage = j.value("slack_voltage", 1.0);
    for (const auto& b : j.at("buses")) {
      spec.buses.push_back({b.at("id").get<std::string>(), b.at("load_mw").get<double>(),
                            b.at("load_mvar").get<double>()});
    }
    for (const auto& l : j.at("lines")) {
      spec.lines.push_back({l.at("from").get<std::size_t>(), l.at("to").get<std::size_t>(),
                            l.at("r").get<double>(), l.at("x").get<double>()});
    }
    const auto& reg = j.at("regulator");
    spec.regulator = {reg.at("line").get<std::size_t>(), reg.value("tap_min", 0.90),
                      reg.value("tap_max", 1.10), reg.value("positions", 33)};
    const auto& cap = j.at("capacitor");
    spec.capacitor = {cap.at("bus").get<std::size_t>(), cap.at("rating_mvar").get<double>()};
    const auto& pv = j.at("pv");
    spec.pv.bus = pv.at("bus").get<std::size_t>();
    spec.pv.source_voltage = pv.value("source_voltage", spec.pv.source_voltage);
    spec.pv.coupling_reactance =
        pv.value("coupling_reactance", spec.pv.coupling_reactance);
    spec.pv.max_angle =
        pv.value("max_angle_deg", 30.0) * std::numbers::pi / 180.0;
    spec.pv.rated_mw = pv.value("rated_mw", spec.pv.rated_mw);
    spec.monitored = j.at("monitored").get<std::vector<std::size_t>>();
    validate_feeder(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", path, e.what()));
  }
}

void save_feeder(const FeederSpec& spec, const std::string& path) {
  nlohmann::json j;
  j["base_mva"] = spec.base_mva;
  j["base_kv"] = spec.base_kv;
  j["slack_voltage"] = spec.slack_voltage;
  for (const Bus& b : spec.buses) {
    j["buses"].push_back({{"id", b.id}, {"load_mw", b.load_mw}, {"load_mvar", b.load_mvar}});
  }
  for (const Line& l : spec.lines) {
    j["lines"].push_back({{"from", l.from}, {"to", l.to}, {"r", l.r}, {"x", l.x}});
  }
  j["regulator"] = {{"line", spec.regulator.line},
                    {"tap_min", spec.regulator.tap_min},
                    {"tap_max", spec.regulator.tap_max},
                    {"positions", spec.regulator.positions}};
  j["capacitor"] = {{"bus", spec.capacitor.bus}, {"rating_mvar", spec.capacitor.rating_mvar}};
  j["pv"] = {{"bus", spec.pv.bus},
             {"source_voltage", spec.pv.source_voltage},
             {"coupling_reactance", spec.pv.coupling_reactance},
             {"max_angle_deg", spec.pv.max_angle * 180.0 / std::numbers::pi},
             {"rated_mw", spec.pv.rated_mw}};
  j["monitored"] = spec.monitored;
  std::ofstream out(path);
  if (!out) throw FormatError(fmt::format("cannot write feeder file {}", path));
  out << j.dump(2) << '\n';
}

int ControlLimits::tap_position(double tap) const {
  const double clamped = std::clamp(tap, tap_min, tap_max);
  return static_cast<int>(std::lround((clamped - tap_min) / tap_step()));
}

double ControlLimits::tap_at(int position) const {
  return tap_min + tap_step() * std::clamp(position, 0, tap_positions - 1);
}

ControlLimits control_limits(const FeederSpec& spec) {
  return {spec.regulator.tap_min, spec.regulator.tap_max,
          spec.regulator.positions, spec.pv.max_angle};
}

ControlVector nominal_controls(const FeederSpec& spec) {
  const ControlLimits limits = control_limits(spec);
  const double p = spec.pv.rated_mw / spec.base_mva;
  const double s = p * spec.pv.coupling_reactance / spec.pv.source_voltage;
  return {limits.tap_at(limits.tap_position(1.0)), true,
          std::clamp(std::asin(std::clamp(s, 0.0, 1.0)), 0.0, spec.pv.max_angle)};
}

std::vector<double> StateVector::features() const {
  std::vector<double> f = voltages;
  f.push_back(head_p);
  f.push_back(head_q);
  f.push_back(pv_p);
  return f;
}

StateVector StateVector::from_features(const std::vector<double>& f) {
  if (f.size() < 4) throw std::invalid_argument("state feature vector too short");
  StateVector s;
  s.voltages.assign(f.begin(), f.end() - 3);
  s.head_p = f[f.size() - 3];
  s.head_q = f[f.size() - 2];
  s.pv_p = f[f.size() - 1];
  return s;
}

std::vector<std::string> state_feature_names(const FeederSpec& spec) {
  std::vector<std::string> names;
  for (std::size_t b : spec.monitored) names.push_back("v" + spec.buses[b].id);
  names.insert(names.end(), {"p_head", "q_head", "p_pv"});
  return names;
}

PowerFlowSolution solve_power_flow(const FeederSpec& spec, const ControlVector& u,
                                   const LoadCondition& condition) {
  const Topology topo = build_topology(spec);
  const std::size_t n = spec.buses.size();
  if (!condition.bus_load.empty() && condition.bus_load.size() != n) {
    throw std::invalid_argument("per-bus load multipliers do not match bus count");
  }
  Sweep sweep{spec, topo, u, condition, std::vector<Complex>(n),
              spec.capacitor.rating_mvar / spec.base_mva};
  double total_load = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const double m = condition.bus_multiplier(b);
    sweep.load[b] = Complex(spec.buses[b].load_mw, spec.buses[b].load_mvar) *
                    (m / spec.base_mva);
    total_load += sweep.load[b].real();
  }

  std::vector<Complex> v(n, Complex(spec.slack_voltage, 0.0));
  for (std::size_t bus : topo.order) {
    if (auto k = topo.parent_line[bus]) v[bus] = sweep.ratio(*k) * v[spec.lines[*k].from];
  }

  PowerFlowSolution sol;
  double mismatch = sweep.mismatch(v);
  int iteration = 0;
  while (mismatch > kPowerFlowTolerance && iteration < kMaxPowerFlowIterations) {
    ++iteration;
    // Backward sweep: accumulate branch currents from the leaves.
    const auto current = sweep.bus_currents(v);
    std::vector<Complex> j(spec.lines.size());
    for (auto it = topo.order.rbegin(); it != topo.order.rend(); ++it) {
      const std::size_t bus = *it;
      const auto k = topo.parent_line[bus];
      if (!k) continue;
      Complex total = current[bus];
      for (std::size_t c : topo.child_lines[bus]) total += sweep.ratio(c) * j[c];
      j[*k] = total;
    }
    // Forward sweep: drop voltages from the substation outward.
    for (std::size_t bus : topo.order) {
      const auto k = topo.parent_line[bus];
      if (!k) continue;
      const Line& line = spec.lines[*k];
      v[bus] = sweep.ratio(*k) * v[line.from] - Complex(line.r, line.x) * j[*k];
    }
    for (const Complex& vb : v) {
      if (!std::isfinite(vb.real()) || !std::isfinite(vb.imag())) {
        throw DivergedError(fmt::format("power flow diverged at iteration {}", iteration),
                            mismatch);
      }
      if (std::abs(vb) < 0.5) {
        throw InfeasibleError(fmt::format(
            "voltage collapse: |V| = {:.4f} pu at iteration {}", std::abs(vb), iteration));
      }
    }
    mismatch = sweep.mismatch(v);
  }
  if (mismatch > kPowerFlowTolerance) {
    throw DivergedError(fmt::format("power flow did not converge in {} iterations "
                                    "(mismatch {:.3e} pu)",
                                    kMaxPowerFlowIterations, mismatch),
                        mismatch);
  }

  sol.voltages = v;
  sol.line_currents = sweep.line_currents(v);
  sol.line_flows.resize(spec.lines.size());
  Complex head{0.0, 0.0};
  for (std::size_t k = 0; k < spec.lines.size(); ++k) {
    const Line& line = spec.lines[k];
    const Complex sending_current = sweep.ratio(k) * sol.line_currents[k];
    sol.line_flows[k] = v[line.from] * std::conj(sending_current);
    sol.losses += line.r * std::norm(sol.line_currents[k]);
    if (line.from == 0) head += sol.line_flows[k];
  }
  const Complex pv = pv_injection(spec.pv, u.pv_angle, std::abs(v[spec.pv.bus]),
                                  pv_multiplier(condition));
  sol.head_power = head;
  sol.pv_p = pv.real();
  sol.pv_q = pv.imag();
  sol.load = total_load;
  sol.generation = head.real() + pv.real();
  sol.max_mismatch = mismatch;
  sol.converged = true;
  sol.iterations = iteration;
  return sol;
}

double compute_efficiency(const PowerFlowSolution& sol) {
  if (!sol.converged) throw std::invalid_argument("efficiency of an unconverged solution");
  if (!(sol.load > 0.0)) {
    throw std::domain_error("efficiency undefined: no load delivered");
  }
  return sol.load / (sol.load + sol.losses);
}

StateVector observe_state(const FeederSpec& spec, const PowerFlowSolution& sol) {
  StateVector s;
  for (std::size_t b : spec.monitored) s.voltages.push_back(std::abs(sol.voltages[b]));
  s.head_p = sol.head_power.real();
  s.head_q = sol.head_power.imag();
  s.pv_p = sol.pv_p;
  return s;
}

Trajectory simulate_trajectory(const FeederSpec& spec,
                               const std::vector<ControlVector>& controls,
                               const std::vector<LoadCondition>& profiles) {
  if (controls.empty() || controls.size() != profiles.size()) {
    throw std::invalid_argument(fmt::format(
        "control schedule ({}) and profiles ({}) must have the same nonzero length",
        controls.size(), profiles.size()));
  }
  Trajectory out;
  out.reserve(controls.size());
  for (std::size_t i = 0; i < controls.size(); ++i) {
    try {
      const PowerFlowSolution sol = solve_power_flow(spec, controls[i], profiles[i]);
      out.push_back({observe_state(spec, sol), controls[i], profiles[i],
                     compute_efficiency(sol)});
    } catch (const NumericalError& e) {
      throw TrajectoryError(fmt::format("step {}: {}", i, e.what()), i);
    }
  }
  return out;
}

namespace {

double diurnal_load(double hour) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const double evening = std::cos(kTwoPi * (hour - 19.0) / 24.0);
  const double morning = std::exp(-(hour - 8.0) * (hour - 8.0) / 4.0);
  return 0.75 + 0.15 * evening + 0.10 * morning;
}

double clear_sky(double hour) {
  const double h = std::fmod(hour, 24.0);
  if (h <= 6.0 || h >= 18.0) return 0.0;
  return std::sin(std::numbers::pi * (h - 6.0) / 12.0);
}

}  // namespace

std::vector<LoadCondition> diurnal_profile(std::size_t steps, double load_scale,
                                           double sun_peak) {
  std::vector<LoadCondition> out(steps);
  const double hours_per_step = 24.0 / static_cast<double>(std::max<std::size_t>(steps, 1));
  for (std::size_t k = 0; k < steps; ++k) {
    const double hour = hours_per_step * static_cast<double>(k);
    out[k].load = load_scale * diurnal_load(hour);
    out[k].irradiance = sun_peak * clear_sky(hour);
  }
  return out;
}

std::vector<Trajectory> generate_scenarios(const FeederSpec& spec,
                                           std::size_t n_scenarios,
                                           std::size_t steps, std::uint64_t seed) {
  if (n_scenarios < 1) throw std::invalid_argument("need at least one scenario");
  if (steps < 2) throw std::invalid_argument("scenarios need at least two steps");
  validate_feeder(spec);
  const ControlLimits limits = control_limits(spec);
  const std::size_t n = spec.buses.size();

  std::vector<Trajectory> out;
  out.reserve(n_scenarios);
  for (std::size_t s = 0; s < n_scenarios; ++s) {
    Rng rng(derive_seed(seed, s));
    const double load_scale = rng.uniform(0.7, 1.1);
    const double sun_peak = rng.uniform(0.6, 1.0);
    const double start_hour = rng.uniform(0.0, 24.0);
    const double hours_per_step = 24.0 / static_cast<double>(steps);

    std::vector<LoadCondition> profiles(steps);
    double cloud = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
      const double hour = std::fmod(start_hour + hours_per_step * k, 24.0);
      cloud = std::clamp(0.8 * cloud + 0.1 * rng.normal(), 0.0, 0.6);
      LoadCondition& c = profiles[k];
      c.load = load_scale * diurnal_load(hour);
      c.irradiance = sun_peak * clear_sky(hour) * (1.0 - cloud);
      c.bus_load.resize(n);
      for (std::size_t b = 0; b < n; ++b) {
        c.bus_load[b] = c.load * (1.0 + 0.03 * rng.normal());
      }
    }

    std::vector<ControlVector> controls(steps);
    int position = static_cast<int>(rng.index(limits.tap_positions));
    bool capacitor = rng.uniform() < 0.5;
    int dwell = 0;
    double angle = rng.uniform(0.0, limits.max_angle);
    double target = rng.uniform(0.0, limits.max_angle);
    double rate = rng.uniform(limits.max_angle / 20.0, limits.max_angle / 5.0);
    for (std::size_t k = 0; k < steps; ++k) {
      if (k > 0) {
        if (rng.uniform() < 0.35) {
          const int delta = 1 + static_cast<int>(rng.index(3));
          position += rng.uniform() < 0.5 ? -delta : delta;
          position = std::clamp(position, 0, limits.tap_positions - 1);
        }
        if (++dwell >= 4 && rng.uniform() < 0.2) {
          capacitor = !capacitor;
          dwell = 0;
        }
        if (std::abs(target - angle) <= rate) {
          angle = target;
          target = rng.uniform(0.0, limits.max_angle);
          rate = rng.uniform(limits.max_angle / 20.0, limits.max_angle / 5.0);
        } else {
          angle += target > angle ? rate : -rate;
        }
      }
      controls[k] = {limits.tap_at(position), capacitor, angle};
    }
    out.push_back(simulate_trajectory(spec, controls, profiles));
  }
  return out;
}

void save_trajectories(const FeederSpec& spec,
                       const std::vector<Trajectory>& trajectories,
                       const std::string& path, const std::string& provenance) {
  std::ofstream out(path);
  if (!out) throw FormatError(fmt::format("cannot write {}", path));
  if (!provenance.empty()) out << "# " << provenance << '\n';
  const std::size_t n = spec.buses.size();
  std::vector<std::string> header{"scenario", "step", "load", "irradiance"};
  for (std::size_t b = 0; b < n; ++b) header.push_back("load_bus" + spec.buses[b].id);
  header.insert(header.end(), {"tap", "capacitor", "pv_angle"});
  for (const auto& name : state_feature_names(spec)) header.push_back(name);
  header.push_back("efficiency");
  out << csv::join(header) << '\n';
  for (std::size_t s = 0; s < trajectories.size(); ++s) {
    for (std::size_t k = 0; k < trajectories[s].size(); ++k) {
      const TrajectoryStep& step = trajectories[s][k];
      std::vector<std::string> row{std::to_string(s), std::to_string(k),
                                   csv::num(step.condition.load),
                                   csv::num(step.condition.irradiance)};
      for (std::size_t b = 0; b < n; ++b) {
        row.push_back(csv::num(step.condition.bus_multiplier(b)));
      }
      row.push_back(csv::num(step.control.tap));
      row.push_back(step.control.capacitor ? "1" : "0");
      row.push_back(csv::num(step.control.pv_angle));
      for (double f : step.state.features()) row.push_back(csv::num(f));
      row.push_back(csv::num(step.efficiency));
      out << csv::join(row) << '\n';
    }
  }
}

std::vector<Trajectory> load_trajectories(const std::string& path) {
  const csv::Table table = csv::read_table(path);
  const auto idx = table.column_index();
  auto col = [&](const std::string& name) {
    auto it = idx.find(name);
    if (it == idx.end()) {
      throw FormatError(fmt::format("{}: missing column '{}'", path, name));
    }
    return it->second;
  };
  const std::size_t c_scenario = col("scenario"), c_load = col("load"),
                    c_irr = col("irradiance"), c_tap = col("tap"),
                    c_cap = col("capacitor"), c_angle = col("pv_angle"),
                    c_eff = col("efficiency");
  std::vector<std::size_t> c_bus, c_state;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (table.header[i].rfind("load_bus", 0) == 0) c_bus.push_back(i);
  }
  // State features sit between pv_angle and efficiency.
  for (std::size_t i = c_angle + 1; i < c_eff; ++i) c_state.push_back(i);

  std::vector<Trajectory> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = fmt::format("{}:{}", path, table.line_numbers[r]);
    const auto scenario = static_cast<std::size_t>(csv::parse_double(row[c_scenario], where));
    if (scenario >= out.size()) out.resize(scenario + 1);
    TrajectoryStep step;
    step.condition.load = csv::parse_double(row[c_load], where);
    step.condition.irradiance = csv::parse_double(row[c_irr], where);
    for (std::size_t c : c_bus) step.condition.bus_load.push_back(csv::parse_double(row[c], where));
    step.control.tap = csv::parse_double(row[c_tap], where);
    step.control.capacitor = csv::parse_double(row[c_cap], where) > 0.5;
    step.control.pv_angle = csv::parse_double(row[c_angle], where);
    std::vector<double> features;
    for (std::size_t c : c_state) features.push_back(csv::parse_double(row[c], where));
    step.state = StateVector::from_features(features);
    step.efficiency = csv::parse_double(row[c_eff], where);
    out[scenario].push_back(std::move(step));
  }
  return out;
}

}  // namespace attnmpc

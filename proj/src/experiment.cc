// SPDX-License-Identifier: Apache-2.0

#include "attnmpc/experiment.h"

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

#include "attnmpc/rng.h"
#include "csv.h"

namespace attnmpc {

Dataset build_dataset(const FeederSpec& spec, const std::vector<Trajectory>& trajectories,
                      std::size_t sequence_length, std::uint64_t seed, SplitMode mode) {
  const ControlCodec codec{control_limits(spec)};
  std::vector<ExampleCase> examples;
  for (std::size_t s = 0; s < trajectories.size(); ++s) {
    auto part = assemble_examples(trajectories[s], sequence_length, codec, s);
    examples.insert(examples.end(), std::make_move_iterator(part.begin()),
                    std::make_move_iterator(part.end()));
  }
  Dataset d = split_dataset(std::move(examples), seed, mode);
  d.feature_names = state_feature_names(spec);
  d.limits = codec.limits;
  return normalize_features(std::move(d));
}

std::vector<ModelSpec> standard_architectures(const ModelSpec& base) {
  std::vector<ModelSpec> out;
  for (Category c : {Category::kA, Category::kB, Category::kC}) {
    for (CellKind k : {CellKind::kDense, CellKind::kLstm, CellKind::kBiLstm}) {
      ModelSpec s = base;
      s.category = c;
      s.cell = k;
      out.push_back(s);
    }
    if (c == Category::kA) {
      ModelSpec s = base;
      s.category = Category::kAMSimple;
      s.cell = CellKind::kLstm;
      out.push_back(s);
    }
  }
  return out;
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || value.empty()) {
    throw std::invalid_argument(fmt::format("model spec: bad value '{}' for {}", value, key));
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

ModelSpec parse_model_spec(const std::string& text) {
  ModelSpec spec;
  if (text.find('=') == std::string::npos) {
    const auto dash = text.rfind('-');
    if (dash == std::string::npos) {
      throw std::invalid_argument(fmt::format("model spec '{}': expected CATEGORY-CELL", text));
    }
    spec.category = parse_category(text.substr(0, dash));
    spec.cell = parse_cell(text.substr(dash + 1));
    validate_model_spec(spec);
    return spec;
  }
  for (const std::string& item : csv::split(text)) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(fmt::format("model spec: expected key=value, got '{}'", item));
    }
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (key == "category") spec.category = parse_category(value);
    else if (key == "cell") spec.cell = parse_cell(value);
    else if (key == "t") spec.sequence_length = parse_size(key, value);
    else if (key == "hidden") spec.hidden_width = parse_size(key, value);
    else if (key == "dk") spec.key_width = parse_size(key, value);
    else if (key == "heads") spec.heads = parse_size(key, value);
    else if (key == "layers") spec.recurrent_layers = parse_size(key, value);
    else throw std::invalid_argument(fmt::format("model spec: unknown key '{}'", key));
  }
  validate_model_spec(spec);
  return spec;
}

std::uint64_t run_seed(std::uint64_t master, const std::string& model, int repeat) {
  // FNV-1a keeps the value stable across standard library implementations.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : model) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return derive_seed(derive_seed(master, h), static_cast<std::uint64_t>(repeat));
}

const Model& ArchitectureResult::best_model() const {
  if (models.empty()) throw std::logic_error("architecture has no trained runs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].test_mse < runs[best].test_mse) best = i;
  }
  return models[best];
}

namespace {

TrainResult train_one(const Dataset& d, ModelSpec spec, TrainConfig cfg,
                      std::uint64_t master_seed, int repeat) {
  spec.state_width = d.state_width();
  spec.sequence_length = d.sequence_length;
  const std::uint64_t seed = run_seed(master_seed, spec.name(), repeat);
  spec.seed = seed;
  cfg.seed = derive_seed(seed, 1);
  return train(build_model(spec), d, cfg);
}

}  // namespace

std::vector<ArchitectureResult> train_architectures(const Dataset& d,
                                                    const std::vector<ModelSpec>& specs,
                                                    const TrainConfig& cfg,
                                                    std::uint64_t master_seed, int workers) {
  validate_train_config(cfg);
  const std::size_t repeats = static_cast<std::size_t>(cfg.repeats);
  const std::size_t jobs = specs.size() * repeats;
  std::vector<std::optional<TrainResult>> done(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        done[j] = train_one(d, specs[j / repeats], cfg, master_seed,
                            static_cast<int>(j % repeats));
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(jobs, 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<ArchitectureResult> out;
  for (std::size_t a = 0; a < specs.size(); ++a) {
    ArchitectureResult r;
    for (std::size_t k = 0; k < repeats; ++k) {
      TrainResult& tr = *done[a * repeats + k];
      r.runs.push_back(tr.metrics);
      r.models.push_back(std::move(tr.model));
    }
    r.spec = r.models.front().spec();
    r.averaged = average_metrics(r.runs);
    out.push_back(std::move(r));
  }
  return out;
}

TrainResult train_extra_repeat(const Dataset& d, const ModelSpec& spec, const TrainConfig& cfg,
                               std::uint64_t master_seed) {
  return train_one(d, spec, cfg, master_seed, cfg.repeats);
}

std::vector<LeaderboardRow> leaderboard_rows(const std::vector<ArchitectureResult>& results) {
  std::vector<LeaderboardRow> rows;
  for (const auto& r : results) {
    rows.push_back({r.spec.name(), r.averaged.test_mse, r.averaged.accuracy,
                    r.averaged.train_seconds, r.averaged.eval_seconds, r.averaged.epochs});
  }
  return rows;
}

void write_metrics(const std::vector<ArchitectureResult>& results, const std::string& dir,
                   const std::string& provenance) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  std::ofstream metrics(base / "metrics.csv");
  std::ofstream curves(base / "curves.csv");
  std::ofstream timing(base / "timing.csv");
  if (!metrics || !curves || !timing) {
    throw FormatError(fmt::format("cannot write metrics files in {}", dir));
  }
  for (std::ofstream* f : {&metrics, &curves, &timing}) *f << "# " << provenance << '\n';
  metrics << "model,repeat,seed,test_mse,accuracy,epochs,best_epoch,best_dev_loss\n";
  curves << "model,repeat,epoch,dev_loss\n";
  timing << "model,repeat,train_seconds,eval_seconds\n";
  for (const auto& r : results) {
    const std::string name = r.spec.name();
    for (std::size_t k = 0; k < r.runs.size(); ++k) {
      const Metrics& m = r.runs[k];
      metrics << csv::join({name, std::to_string(k), std::to_string(r.models[k].spec().seed),
                            csv::num(m.test_mse), csv::num(m.accuracy),
                            std::to_string(m.epochs), std::to_string(m.best_epoch),
                            csv::num(m.best_dev_loss)})
              << '\n';
      for (std::size_t e = 0; e < m.dev_trace.size(); ++e) {
        curves << csv::join({name, std::to_string(k), std::to_string(e + 1),
                             csv::num(m.dev_trace[e])})
               << '\n';
      }
      timing << csv::join({name, std::to_string(k), csv::num(m.train_seconds),
                           csv::num(m.eval_seconds)})
             << '\n';
    }
    const Metrics& a = r.averaged;
    metrics << csv::join({name, "mean", "", csv::num(a.test_mse), csv::num(a.accuracy),
                          std::to_string(a.epochs), std::to_string(a.best_epoch),
                          csv::num(a.best_dev_loss)})
            << '\n';
  }
}

std::vector<ClosedLoopComparison> compare_closed_loop(const Model& m, const FeederSpec& spec,
                                                      const std::vector<Trajectory>& logged,
                                                      const std::vector<LoadCondition>& profile) {
  const BestStateReference reference(logged);
  const ReferencePolicy policy = [&reference](const LoadCondition& c, std::size_t step) {
    return reference(c, step);
  };
  std::vector<ClosedLoopComparison> out;
  for (const BaseControlModel& base : default_base_models(spec)) {
    out.push_back({base, run_baseline(base, spec, profile),
                   run_closed_loop(m, base, spec, policy, profile)});
  }
  return out;
}

std::vector<EfficiencyRow> efficiency_rows(const std::vector<ClosedLoopComparison>& runs) {
  std::vector<EfficiencyRow> rows;
  for (const auto& c : runs) {
    rows.push_back({c.base.index, c.mpc.label, c.baseline.mean_efficiency,
                    c.mpc.mean_efficiency});
  }
  return rows;
}

}  // namespace attnmpc

// SPDX-License-Identifier: Apache-2.0
//
// Pipeline orchestration shared by the command line and the acceptance
// suite: dataset construction, repeated training of several architectures,
// metrics files and closed-loop evaluation.

#ifndef ATTNMPC_EXPERIMENT_H_
#define ATTNMPC_EXPERIMENT_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "attnmpc/closed_loop.h"
#include "attnmpc/dataset.h"
#include "attnmpc/feeder.h"
#include "attnmpc/model_zoo.h"
#include "attnmpc/trainer.h"

namespace attnmpc {

// Examples from every trajectory (group = scenario index), split and
// normalized.
Dataset build_dataset(const FeederSpec& spec, const std::vector<Trajectory>& trajectories,
                      std::size_t sequence_length, std::uint64_t seed,
                      SplitMode mode = SplitMode::kExample);

// A, B and C with each cell kind plus AM_simple-LSTM, sharing the widths of
// `base`.
std::vector<ModelSpec> standard_architectures(const ModelSpec& base = {});

// Parses "category=AM,cell=LSTM,t=2,hidden=64,dk=32,heads=4,layers=1" or the
// short "AM_simple-LSTM" form. Throws std::invalid_argument.
ModelSpec parse_model_spec(const std::string& text);

// Seed for repeat r of a named architecture; independent of which other
// architectures are trained.
std::uint64_t run_seed(std::uint64_t master, const std::string& model, int repeat);

struct ArchitectureResult {
  ModelSpec spec;
  std::vector<Metrics> runs;
  std::vector<Model> models;
  Metrics averaged;

  // Repeat with the lowest test loss.
  const Model& best_model() const;
};

// Trains cfg.repeats runs of every architecture. Runs are spread over
// `workers` threads; results do not depend on the worker count.
std::vector<ArchitectureResult> train_architectures(const Dataset& d,
                                                    const std::vector<ModelSpec>& specs,
                                                    const TrainConfig& cfg,
                                                    std::uint64_t master_seed,
                                                    int workers = 1);

// One extra run of a single architecture, as repeat index cfg.repeats.
TrainResult train_extra_repeat(const Dataset& d, const ModelSpec& spec,
                               const TrainConfig& cfg, std::uint64_t master_seed);

std::vector<LeaderboardRow> leaderboard_rows(const std::vector<ArchitectureResult>& results);

// metrics.csv (one row per run), curves.csv (dev loss per epoch) and
// timing.csv (wall-times, kept apart so the other files are reproducible).
void write_metrics(const std::vector<ArchitectureResult>& results, const std::string& dir,
                   const std::string& provenance);

struct ClosedLoopComparison {
  BaseControlModel base;
  ClosedLoopRun baseline;
  ClosedLoopRun mpc;
};

std::vector<ClosedLoopComparison> compare_closed_loop(
    const Model& m, const FeederSpec& spec, const std::vector<Trajectory>& logged,
    const std::vector<LoadCondition>& profile);

std::vector<EfficiencyRow> efficiency_rows(const std::vector<ClosedLoopComparison>& runs);

}  // namespace attnmpc

#endif  // ATTNMPC_EXPERIMENT_H_

// SPDX-License-Identifier: Apache-2.0
//
// Supervised inverse-dynamics examples (u_{i-1}, x_{i-1}, ..., x_i) -> u_i,
// train/dev/test splits, state normalization and tabular storage.

#ifndef ATTNMPC_DATASET_H_
#define ATTNMPC_DATASET_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "attnmpc/feeder.h"
#include "attnmpc/model_zoo.h"

namespace attnmpc {

struct ExampleCase {
  EncodedControls u_prev{};
  std::vector<std::vector<double>> state_seq;  // t raw state feature vectors
  EncodedControls u_target{};
  std::size_t group = 0;  // source trajectory
};

// For sequence length t, example i uses u_{i-1}, states x_{i-1} ..
// x_{i+t-2} and targets u_{i+t-2}. Yields T - t + 1 examples.
std::vector<ExampleCase> assemble_examples(const Trajectory& trajectory,
                                           std::size_t t, const ControlCodec& codec,
                                           std::size_t group = 0);

enum class SplitMode { kExample, kTrajectory };

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
  std::vector<std::size_t> test;
};

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> scale;  // standard deviation, or 1 when below 1e-8
};

struct Dataset {
  std::vector<ExampleCase> examples;
  std::vector<std::string> feature_names;
  std::size_t sequence_length = 2;
  Split split;
  SplitMode split_mode = SplitMode::kExample;
  std::uint64_t seed = 0;
  ControlLimits limits;
  // Empty until normalize_features() runs.
  FeatureStats stats;
  // Free-form record of how the dataset was produced.
  std::string provenance;

  std::size_t state_width() const {
    return examples.empty() ? 0 : examples.front().state_seq.front().size();
  }
  bool normalized() const { return !stats.mean.empty(); }
  // State sequence of example i after normalization (raw when unnormalized).
  std::vector<std::vector<double>> normalized_states(std::size_t i) const;
};

// test = round(0.2 N); dev = round(0.2 (N - test)); the rest is train.
// Trajectory mode assigns whole groups to test and dev until the targets are
// reached.
Dataset split_dataset(std::vector<ExampleCase> examples, std::uint64_t seed,
                      SplitMode mode = SplitMode::kExample);

// Computes state statistics from the train split only.
Dataset normalize_features(Dataset d);

FeatureScaler scaler_of(const Dataset& d);

// One example per row with named columns plus a JSON sidecar (path +
// ".meta.json") holding splits, statistics, t, limits and seed.
void serialize_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

std::string metadata_path(const std::string& dataset_path);

}  // namespace attnmpc

#endif  // ATTNMPC_DATASET_H_

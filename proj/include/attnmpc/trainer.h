// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch Adam training with reduce-on-plateau annealing, early stopping
// on dev loss with restore-best, and test-set metrics.

#ifndef ATTNMPC_TRAINER_H_
#define ATTNMPC_TRAINER_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "attnmpc/autodiff.h"
#include "attnmpc/dataset.h"
#include "attnmpc/model_zoo.h"

namespace attnmpc {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double learning_rate = 0.01;
  AdamConfig adam;
  double anneal_factor = 0.5;
  int anneal_patience = 5;
  double lr_floor = 1e-5;
  int patience = 20;
  int max_epochs = 500;
  std::size_t batch_size = 64;
  std::uint64_t seed = 42;
  int repeats = 2;
};

// Throws std::invalid_argument on non-positive settings.
void validate_train_config(const TrainConfig& cfg);

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
};

// One bias-corrected Adam update; step is 1-based. Throws NumericalError on
// a non-finite gradient before touching params or moments.
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamMoments& moments, long step, double lr,
               const AdamConfig& cfg = {});

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<NamedTensor> params, AdamConfig cfg = {});
  // Applies one update from the accumulated gradients, then zeroes them.
  void step(double lr);
  void zero_grad();
  long steps_taken() const { return step_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<AdamMoments> moments_;
  AdamConfig cfg_;
  long step_ = 0;
};

// Reduce-on-plateau: when the trace has gone a positive multiple of
// anneal_patience epochs without improving on its minimum, returns
// max(lr * anneal_factor, lr_floor); otherwise lr.
double anneal_lr(std::span<const double> trace, double lr, const TrainConfig& cfg);

struct EarlyStoppingResult {
  int epochs_run = 0;
  int best_epoch = 0;
  double best_loss = 0.0;
  std::vector<double> trace;     // dev loss per epoch
  std::vector<double> lr_trace;  // learning rate used in each epoch
};

// Runs run_epoch(epoch, lr) then dev_loss() each epoch; stops once patience
// epochs pass without improvement or max_epochs is reached, and restores the
// parameter values from the best epoch. Throws NumericalError (naming the
// epoch) if the dev loss is not finite.
EarlyStoppingResult run_early_stopping(std::span<Tensor> params,
                                       const std::function<void(int, double)>& run_epoch,
                                       const std::function<double()>& dev_loss,
                                       const TrainConfig& cfg);

struct Metrics {
  double test_mse = 0.0;
  double accuracy = 0.0;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  int epochs = 0;
  int best_epoch = 0;
  double best_dev_loss = 0.0;
  std::vector<double> dev_trace;
};

// Arithmetic mean of every scalar field; the trace is taken from the first run.
Metrics average_metrics(std::span<const Metrics> runs);

// Decoded-and-rounded match: same tap position, same capacitor state after
// rounding, angle within angle_tolerance * max_angle.
struct AccuracyRule {
  double angle_tolerance = 0.02;
};

bool controls_match(const EncodedControls& predicted, const EncodedControls& target,
                    const ControlLimits& limits, const AccuracyRule& rule = {});

// Network-space inputs of a set of examples, normalized with the dataset's
// statistics.
struct Batch {
  Tensor u_prev;               // [n x d_u]
  std::vector<Tensor> states;  // t x [n x d_x]
  Tensor target;               // [n x d_u]
};

Batch make_batch(const Dataset& d, std::span<const std::size_t> indices);

// Mean squared error over all outputs of the given examples.
double dataset_loss(const Model& m, const Dataset& d,
                    std::span<const std::size_t> indices);

// Encoded predictions, one row per index.
std::vector<EncodedControls> predict_batch(const Model& m, const Dataset& d,
                                           std::span<const std::size_t> indices);

struct TrainResult {
  Model model;
  Metrics metrics;
  EarlyStoppingResult history;
};

// The model's codec and scaler are set from the dataset. Requires non-empty
// train, dev and test splits.
TrainResult train(Model model, const Dataset& d, const TrainConfig& cfg);

// Test-split MSE and accuracy; eval_seconds covers test inference.
Metrics evaluate_metrics(const Model& m, const Dataset& d, const AccuracyRule& rule = {});

}  // namespace attnmpc

#endif  // ATTNMPC_TRAINER_H_

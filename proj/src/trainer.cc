// SPDX-License-Identifier: Apache-2.0

#include "attnmpc/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "attnmpc/rng.h"

namespace attnmpc {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

constexpr std::size_t kEvalChunk = 1024;

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0) || !(cfg.anneal_factor > 0) || !(cfg.lr_floor > 0) ||
      cfg.anneal_patience < 1 || cfg.patience < 1 || cfg.max_epochs < 1 ||
      cfg.batch_size < 1 || cfg.repeats < 1 || !(cfg.adam.epsilon > 0) ||
      !(cfg.adam.beta1 > 0) || !(cfg.adam.beta2 > 0)) {
    throw std::invalid_argument("training configuration values must be positive");
  }
}

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamMoments& moments, long step, double lr, const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient size mismatch");
  if (step < 1) throw std::invalid_argument("adam_step: step index starts at 1");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericalError(fmt::format("adam_step: non-finite gradient {} at entry {}",
                                       grads[i], i));
    }
  }
  if (moments.first.size() != params.size()) {
    moments.first.assign(params.size(), 0.0);
    moments.second.assign(params.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = moments.first[i];
    double& v = moments.second[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    params[i] -= lr * (m / c1) / (std::sqrt(v / c2) + cfg.epsilon);
  }
}

AdamOptimizer::AdamOptimizer(std::vector<NamedTensor> params, AdamConfig cfg)
    : params_(std::move(params)), moments_(params_.size()), cfg_(cfg) {}

void AdamOptimizer::step(double lr) {
  // Check everything first so a bad gradient leaves all parameters untouched.
  std::vector<std::string> bad;
  for (const auto& p : params_) {
    const auto g = p.tensor.grad();
    if (std::any_of(g.begin(), g.end(), [](double x) { return !std::isfinite(x); })) {
      bad.push_back(p.name);
    }
  }
  if (!bad.empty()) {
    std::string names;
    for (const auto& b : bad) names += (names.empty() ? "" : ", ") + b;
    throw NumericalError(
        fmt::format("non-finite gradient after {} steps in: {}", step_, names));
  }
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    std::vector<double> g(t.grad().begin(), t.grad().end());
    if (g.empty()) g.assign(t.size(), 0.0);
    adam_step(t.mutable_values(), g, moments_[i], step_, lr, cfg_);
  }
  zero_grad();
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double anneal_lr(std::span<const double> trace, double lr, const TrainConfig& cfg) {
  if (!(lr > 0)) throw std::invalid_argument("anneal_lr: learning rate must be positive");
  if (trace.empty()) return lr;
  const auto best = std::min_element(trace.begin(), trace.end());
  const auto stale = static_cast<int>(std::distance(best, trace.end()) - 1);
  if (stale > 0 && stale % cfg.anneal_patience == 0) {
    return std::max(lr * cfg.anneal_factor, cfg.lr_floor);
  }
  return lr;
}

EarlyStoppingResult run_early_stopping(std::span<Tensor> params,
                                       const std::function<void(int, double)>& run_epoch,
                                       const std::function<double()>& dev_loss,
                                       const TrainConfig& cfg) {
  validate_train_config(cfg);
  EarlyStoppingResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_values;
  double lr = cfg.learning_rate;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    run_epoch(epoch, lr);
    const double loss = dev_loss();
    if (!std::isfinite(loss)) {
      throw NumericalError(fmt::format("dev loss diverged at epoch {}", epoch));
    }
    result.trace.push_back(loss);
    result.lr_trace.push_back(lr);
    result.epochs_run = epoch;
    if (loss < result.best_loss) {
      result.best_loss = loss;
      result.best_epoch = epoch;
      best_values.clear();
      for (const Tensor& p : params) best_values.emplace_back(p.values().begin(), p.values().end());
    } else if (epoch - result.best_epoch >= cfg.patience) {
      break;
    }
    lr = anneal_lr(result.trace, lr, cfg);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(best_values[i].begin(), best_values[i].end(),
              params[i].mutable_values().begin());
  }
  return result;
}

Metrics average_metrics(std::span<const Metrics> runs) {
  if (runs.empty()) throw std::invalid_argument("average_metrics: no runs");
  Metrics avg;
  const double n = static_cast<double>(runs.size());
  double epochs = 0.0, best_epoch = 0.0;
  for (const Metrics& m : runs) {
    avg.test_mse += m.test_mse / n;
    avg.accuracy += m.accuracy / n;
    avg.train_seconds += m.train_seconds / n;
    avg.eval_seconds += m.eval_seconds / n;
    avg.best_dev_loss += m.best_dev_loss / n;
    epochs += m.epochs / n;
    best_epoch += m.best_epoch / n;
  }
  avg.epochs = static_cast<int>(std::lround(epochs));
  avg.best_epoch = static_cast<int>(std::lround(best_epoch));
  avg.dev_trace = runs.front().dev_trace;
  return avg;
}

bool controls_match(const EncodedControls& predicted, const EncodedControls& target,
                    const ControlLimits& limits, const AccuracyRule& rule) {
  const ControlCodec codec{limits};
  const EncodedControls p = codec.decode(predicted);
  const EncodedControls t = codec.decode(target);
  if (limits.tap_position(p[0]) != limits.tap_position(t[0])) return false;
  if ((p[1] >= 0.5) != (t[1] >= 0.5)) return false;
  const double pa = std::clamp(p[2], 0.0, limits.max_angle);
  const double ta = std::clamp(t[2], 0.0, limits.max_angle);
  return std::abs(pa - ta) <= rule.angle_tolerance * limits.max_angle;
}

Batch make_batch(const Dataset& d, std::span<const std::size_t> indices) {
  const std::size_t n = indices.size();
  const std::size_t t = d.sequence_length;
  const std::size_t w = d.state_width();
  std::vector<double> u(n * kControlWidth), target(n * kControlWidth);
  std::vector<std::vector<double>> steps(t, std::vector<double>(n * w));
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = indices[r];
    const ExampleCase& ex = d.examples[i];
    std::copy(ex.u_prev.begin(), ex.u_prev.end(), u.begin() + r * kControlWidth);
    std::copy(ex.u_target.begin(), ex.u_target.end(), target.begin() + r * kControlWidth);
    for (std::size_t k = 0; k < t; ++k) {
      const auto& raw = ex.state_seq[k];
      for (std::size_t f = 0; f < w; ++f) {
        steps[k][r * w + f] = d.normalized()
                                  ? (raw[f] - d.stats.mean[f]) / d.stats.scale[f]
                                  : raw[f];
      }
    }
  }
  Batch b;
  b.u_prev = Tensor::matrix(n, kControlWidth, std::move(u));
  b.target = Tensor::matrix(n, kControlWidth, std::move(target));
  for (auto& s : steps) b.states.push_back(Tensor::matrix(n, w, std::move(s)));
  return b;
}

std::vector<EncodedControls> predict_batch(const Model& m, const Dataset& d,
                                           std::span<const std::size_t> indices) {
  NoGradGuard no_grad;
  std::vector<EncodedControls> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const auto chunk = indices.subspan(start, std::min(kEvalChunk, indices.size() - start));
    const Batch b = make_batch(d, chunk);
    const Tensor y = m.forward(b.u_prev, b.states);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      out.push_back({y.at(r, 0), y.at(r, 1), y.at(r, 2)});
    }
  }
  return out;
}

double dataset_loss(const Model& m, const Dataset& d, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("dataset_loss: no examples");
  const auto pred = predict_batch(m, d, indices);
  double acc = 0.0;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& target = d.examples[indices[r]].u_target;
    for (std::size_t c = 0; c < kControlWidth; ++c) {
      acc += (pred[r][c] - target[c]) * (pred[r][c] - target[c]);
    }
  }
  return acc / static_cast<double>(indices.size() * kControlWidth);
}

TrainResult train(Model model, const Dataset& d, const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (d.split.train.empty() || d.split.dev.empty()) {
    throw std::invalid_argument("train: dataset needs non-empty train and dev splits");
  }
  if (model.spec().state_width != d.state_width() ||
      model.spec().sequence_length != d.sequence_length) {
    throw ShapeError(fmt::format("train: model expects t={} width={}, dataset has t={} width={}",
                                 model.spec().sequence_length, model.spec().state_width,
                                 d.sequence_length, d.state_width()));
  }
  model.codec = ControlCodec{d.limits};
  model.scaler = scaler_of(d);

  const auto start = Clock::now();
  AdamOptimizer optimizer(model.parameters(), cfg.adam);
  std::vector<Tensor> params = model.parameter_tensors();
  Rng rng(derive_seed(cfg.seed, 0xba7c4));
  std::vector<std::size_t> order = d.split.train;

  auto run_epoch = [&](int epoch, double lr) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - begin);
      const Batch b = make_batch(d, std::span(order).subspan(begin, len));
      const Tensor loss = mse_loss(model.forward(b.u_prev, b.states), b.target);
      backward(loss);
      try {
        optimizer.step(lr);
      } catch (const NumericalError& e) {
        throw NumericalError(fmt::format("epoch {}: {}", epoch, e.what()));
      }
    }
  };
  auto dev = [&] { return dataset_loss(model, d, d.split.dev); };

  TrainResult result{model, {}, {}};
  result.history = run_early_stopping(params, run_epoch, dev, cfg);
  const double train_seconds = seconds_since(start);

  if (!d.split.test.empty()) result.metrics = evaluate_metrics(model, d);
  result.metrics.train_seconds = train_seconds;
  result.metrics.epochs = result.history.epochs_run;
  result.metrics.best_epoch = result.history.best_epoch;
  result.metrics.best_dev_loss = result.history.best_loss;
  result.metrics.dev_trace = result.history.trace;
  return result;
}

Metrics evaluate_metrics(const Model& m, const Dataset& d, const AccuracyRule& rule) {
  if (d.split.test.empty()) throw std::invalid_argument("evaluate_metrics: empty test split");
  Metrics out;
  const auto start = Clock::now();
  const auto pred = predict_batch(m, d, d.split.test);
  out.eval_seconds = seconds_since(start);
  double acc = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < pred.size(); ++r) {
    const auto& target = d.examples[d.split.test[r]].u_target;
    for (std::size_t c = 0; c < kControlWidth; ++c) {
      acc += (pred[r][c] - target[c]) * (pred[r][c] - target[c]);
    }
    if (controls_match(pred[r], target, d.limits, rule)) ++hits;
  }
  out.test_mse = acc / static_cast<double>(pred.size() * kControlWidth);
  out.accuracy = static_cast<double>(hits) / static_cast<double>(pred.size());
  return out;
}

}  // namespace attnmpc

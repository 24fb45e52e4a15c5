// SPDX-License-Identifier: Apache-2.0

#include "attnmpc/dataset.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "attnmpc/rng.h"
#include "csv.h"
#include "json.hpp"

namespace attnmpc {

namespace {

constexpr const char* kControlNames[kControlWidth] = {"tap", "capacitor", "pv_angle"};

std::string step_prefix(std::size_t k, std::size_t t) {
  if (t == 2) return k == 0 ? "x_prev_" : "x_next_";
  return fmt::format("x{}_", k);
}

std::vector<std::string> column_names(const Dataset& d) {
  std::vector<std::string> names;
  for (const char* c : kControlNames) names.push_back(std::string("u_prev_") + c);
  for (std::size_t k = 0; k < d.sequence_length; ++k) {
    for (const auto& f : d.feature_names) names.push_back(step_prefix(k, d.sequence_length) + f);
  }
  for (const char* c : kControlNames) names.push_back(std::string("u_target_") + c);
  return names;
}

}  // namespace

std::vector<ExampleCase> assemble_examples(const Trajectory& trajectory, std::size_t t,
                                           const ControlCodec& codec, std::size_t group) {
  if (t < 1 || trajectory.size() < t) {
    throw std::invalid_argument(fmt::format(
        "trajectory of length {} is shorter than sequence length {}", trajectory.size(), t));
  }
  const std::size_t count = trajectory.size() - t + 1;
  std::vector<ExampleCase> out;
  out.reserve(count);
  for (std::size_t i = 1; i <= count; ++i) {
    ExampleCase ex;
    ex.u_prev = codec.encode(trajectory[i - 1].control);
    for (std::size_t k = 0; k < t; ++k) {
      ex.state_seq.push_back(trajectory[i - 1 + k].state.features());
    }
    ex.u_target = codec.encode(trajectory[i + t - 2].control);
    ex.group = group;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::vector<double>> Dataset::normalized_states(std::size_t i) const {
  const auto& seq = examples.at(i).state_seq;
  if (!normalized()) return seq;
  std::vector<std::vector<double>> out = seq;
  for (auto& step : out) {
    for (std::size_t f = 0; f < step.size(); ++f) {
      step[f] = (step[f] - stats.mean[f]) / stats.scale[f];
    }
  }
  return out;
}

Dataset split_dataset(std::vector<ExampleCase> examples, std::uint64_t seed,
                      SplitMode mode) {
  const std::size_t n = examples.size();
  if (n < 5) {
    throw std::invalid_argument(fmt::format("need at least 5 examples to split, got {}", n));
  }
  Dataset d;
  d.sequence_length = examples.front().state_seq.size();
  d.examples = std::move(examples);
  d.seed = seed;
  d.split_mode = mode;

  const auto n_test = static_cast<std::size_t>(std::round(0.2 * static_cast<double>(n)));
  const auto n_dev =
      static_cast<std::size_t>(std::round(0.2 * static_cast<double>(n - n_test)));
  Rng rng(derive_seed(seed, 0x5eed));

  if (mode == SplitMode::kExample) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    d.split.test.assign(order.begin(), order.begin() + n_test);
    d.split.dev.assign(order.begin() + n_test, order.begin() + n_test + n_dev);
    d.split.train.assign(order.begin() + n_test + n_dev, order.end());
  } else {
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[d.examples[i].group].push_back(i);
    std::vector<std::size_t> ids;
    for (const auto& [id, members] : groups) ids.push_back(id);
    rng.shuffle(ids);
    for (std::size_t id : ids) {
      auto& members = groups[id];
      auto& bucket = d.split.test.size() < n_test  ? d.split.test
                     : d.split.dev.size() < n_dev ? d.split.dev
                                                  : d.split.train;
      bucket.insert(bucket.end(), members.begin(), members.end());
    }
  }
  if (d.split.train.empty() || d.split.test.empty()) {
    throw std::invalid_argument("split produced an empty train or test portion");
  }
  return d;
}

Dataset normalize_features(Dataset d) {
  if (d.split.train.empty()) throw std::invalid_argument("normalize_features: empty train split");
  const std::size_t w = d.state_width();
  std::vector<double> mean(w, 0.0), sq(w, 0.0);
  std::size_t count = 0;
  for (std::size_t i : d.split.train) {
    for (const auto& step : d.examples[i].state_seq) {
      for (std::size_t f = 0; f < w; ++f) mean[f] += step[f];
      ++count;
    }
  }
  for (double& m : mean) m /= static_cast<double>(count);
  for (std::size_t i : d.split.train) {
    for (const auto& step : d.examples[i].state_seq) {
      for (std::size_t f = 0; f < w; ++f) sq[f] += (step[f] - mean[f]) * (step[f] - mean[f]);
    }
  }
  d.stats.mean = mean;
  d.stats.scale.resize(w);
  for (std::size_t f = 0; f < w; ++f) {
    const double sd = std::sqrt(sq[f] / static_cast<double>(count));
    d.stats.scale[f] = sd < 1e-8 ? 1.0 : sd;
  }
  return d;
}

FeatureScaler scaler_of(const Dataset& d) { return {d.stats.mean, d.stats.scale}; }

std::string metadata_path(const std::string& dataset_path) {
  return dataset_path + ".meta.json";
}

void serialize_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(fmt::format("cannot write dataset {}", path));
  out << csv::join(column_names(d)) << '\n';
  for (const ExampleCase& ex : d.examples) {
    std::vector<std::string> row;
    for (double v : ex.u_prev) row.push_back(csv::num(v));
    for (const auto& step : ex.state_seq) {
      for (double v : step) row.push_back(csv::num(v));
    }
    for (double v : ex.u_target) row.push_back(csv::num(v));
    out << csv::join(row) << '\n';
  }

  nlohmann::json meta;
  meta["format"] = "attnmpc-dataset";
  meta["version"] = 1;
  meta["sequence_length"] = d.sequence_length;
  meta["seed"] = d.seed;
  meta["split_mode"] = d.split_mode == SplitMode::kExample ? "example" : "trajectory";
  meta["feature_names"] = d.feature_names;
  meta["split"] = {{"train", d.split.train}, {"dev", d.split.dev}, {"test", d.split.test}};
  meta["stats"] = {{"mean", d.stats.mean}, {"scale", d.stats.scale}};
  meta["limits"] = {{"tap_min", d.limits.tap_min},
                    {"tap_max", d.limits.tap_max},
                    {"tap_positions", d.limits.tap_positions},
                    {"max_angle", d.limits.max_angle}};
  std::vector<std::size_t> groups;
  for (const auto& ex : d.examples) groups.push_back(ex.group);
  meta["groups"] = groups;
  meta["provenance"] = d.provenance;
  std::ofstream m(metadata_path(path));
  if (!m) throw FormatError(fmt::format("cannot write {}", metadata_path(path)));
  // max_digits10 keeps the statistics bit-exact.
  m << meta.dump(1) << '\n';
}

Dataset load_dataset(const std::string& path) {
  std::ifstream m(metadata_path(path));
  if (!m) throw FormatError(fmt::format("missing metadata sidecar {}", metadata_path(path)));
  Dataset d;
  std::vector<std::size_t> groups;
  try {
    nlohmann::json meta;
    m >> meta;
    if (meta.at("format") != "attnmpc-dataset") {
      throw FormatError(fmt::format("{}: not a dataset sidecar", metadata_path(path)));
    }
    d.sequence_length = meta.at("sequence_length").get<std::size_t>();
    d.seed = meta.at("seed").get<std::uint64_t>();
    d.split_mode = meta.at("split_mode") == "trajectory" ? SplitMode::kTrajectory
                                                        : SplitMode::kExample;
    d.feature_names = meta.at("feature_names").get<std::vector<std::string>>();
    d.split.train = meta.at("split").at("train").get<std::vector<std::size_t>>();
    d.split.dev = meta.at("split").at("dev").get<std::vector<std::size_t>>();
    d.split.test = meta.at("split").at("test").get<std::vector<std::size_t>>();
    d.stats.mean = meta.at("stats").at("mean").get<std::vector<double>>();
    d.stats.scale = meta.at("stats").at("scale").get<std::vector<double>>();
    const auto& lim = meta.at("limits");
    d.limits = {lim.at("tap_min").get<double>(), lim.at("tap_max").get<double>(),
                lim.at("tap_positions").get<int>(), lim.at("max_angle").get<double>()};
    groups = meta.at("groups").get<std::vector<std::size_t>>();
    d.provenance = meta.value("provenance", "");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", metadata_path(path), e.what()));
  }

  const csv::Table table = csv::read_table(path);
  const auto index = table.column_index();
  const auto expected = column_names(d);
  if (table.header.size() != expected.size()) {
    throw FormatError(fmt::format("{}:1: header has {} columns, expected {}", path,
                                  table.header.size(), expected.size()));
  }
  std::vector<std::size_t> source;
  for (const auto& name : expected) {
    auto it = index.find(name);
    if (it == index.end()) {
      throw FormatError(fmt::format("{}:1: malformed header, missing column '{}'", path, name));
    }
    source.push_back(it->second);
  }
  if (groups.size() != table.rows.size()) {
    throw FormatError(fmt::format("{}: {} rows but metadata lists {} examples", path,
                                  table.rows.size(), groups.size()));
  }
  const std::size_t w = d.feature_names.size();
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = fmt::format("{}:{}", path, table.line_numbers[r]);
    std::size_t c = 0;
    auto next = [&] { return csv::parse_double(row[source[c++]], where); };
    ExampleCase ex;
    for (double& v : ex.u_prev) v = next();
    ex.state_seq.assign(d.sequence_length, std::vector<double>(w));
    for (auto& step : ex.state_seq) {
      for (double& v : step) v = next();
    }
    for (double& v : ex.u_target) v = next();
    ex.group = groups[r];
    d.examples.push_back(std::move(ex));
  }
  const std::size_t n = d.examples.size();
  for (const auto* part : {&d.split.train, &d.split.dev, &d.split.test}) {
    for (std::size_t i : *part) {
      if (i >= n) throw FormatError(fmt::format("{}: split index {} out of range", path, i));
    }
  }
  return d;
}

}  // namespace attnmpc

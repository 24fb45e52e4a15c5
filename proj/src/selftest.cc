// SPDX-License-Identifier: Apache-2.0

#include "attnmpc/selftest.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <exception>

#include <fmt/format.h>

#include "attnmpc/autodiff.h"
#include "attnmpc/feeder.h"
#include "attnmpc/layers.h"
#include "attnmpc/model_zoo.h"
#include "attnmpc/rng.h"

namespace attnmpc {

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::matrix(r, c, std::move(v));
}

double model_gradient_error(const ModelSpec& spec, Rng& rng) {
  Model m = build_model(spec);
  // Finite differences are meaningless at the relu kink, so push every
  // output pre-activation well into the active region.
  for (const auto& p : m.parameters()) {
    if (p.name == "output.bias") {
      for (double& b : Tensor(p.tensor).mutable_values()) b += 3.0;
    }
  }
  const std::size_t batch = 2;
  const Tensor u = random_matrix(batch, spec.control_width, rng, 0.0, 1.0);
  std::vector<Tensor> xs;
  for (std::size_t k = 0; k < spec.sequence_length; ++k) {
    xs.push_back(random_matrix(batch, spec.state_width, rng));
  }
  const Tensor target = random_matrix(batch, spec.control_width, rng, 2.0, 4.0);
  std::vector<Tensor> params = m.parameter_tensors();
  return finite_difference_check(
      [&] { return mse_loss(m.forward(u, xs), target); }, params);
}

// Attention evaluated entry by entry from its definition.
std::vector<std::vector<double>> looped_attention(const AttentionHead& h, std::size_t dk,
                                                  const std::vector<std::vector<double>>& x) {
  const std::size_t t = x.size();
  const std::size_t dx = x.front().size();
  auto project = [&](const Tensor& w, std::size_t i, std::size_t c) {
    double s = 0.0;
    for (std::size_t f = 0; f < dx; ++f) s += x[i][f] * w.at(f, c);
    return s;
  };
  std::vector<std::vector<double>> out(t, std::vector<double>(dk, 0.0));
  for (std::size_t i = 0; i < t; ++i) {
    std::vector<double> score(t, 0.0);
    for (std::size_t l = 0; l < t; ++l) {
      for (std::size_t c = 0; c < dk; ++c) score[l] += project(h.query, i, c) * project(h.key, l, c);
      score[l] /= std::sqrt(static_cast<double>(dk));
    }
    const double top = *std::max_element(score.begin(), score.end());
    double z = 0.0;
    for (double& s : score) z += (s = std::exp(s - top));
    for (std::size_t l = 0; l < t; ++l) {
      for (std::size_t c = 0; c < dk; ++c) out[i][c] += score[l] / z * project(h.value, l, c);
    }
  }
  return out;
}

double attention_error(Rng& rng) {
  const std::size_t t = 3, dx = 5, dk = 4, heads = 2, dout = 3;
  const AttentionParams p = make_attention(dx, dk, heads, t, dout, rng);
  std::vector<std::vector<double>> x(t, std::vector<double>(dx));
  std::vector<Tensor> xs;
  for (auto& row : x) {
    for (double& v : row) v = rng.uniform(-1.0, 1.0);
    xs.push_back(Tensor::matrix(1, dx, row));
  }
  std::vector<double> flat;
  for (const AttentionHead& h : p.heads) {
    for (const auto& a : looped_attention(h, dk, x)) flat.insert(flat.end(), a.begin(), a.end());
  }
  const Tensor y = multi_head_attention(p, xs);
  double worst = 0.0;
  for (std::size_t c = 0; c < dout; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < flat.size(); ++r) s += flat[r] * p.output.at(r, c);
    worst = std::max(worst, std::abs(s - y.at(0, c)));
  }
  return worst;
}

double power_balance_error() {
  const FeederSpec spec = default_feeder();
  const PowerFlowSolution sol = solve_power_flow(spec, nominal_controls(spec));
  // Slack + PV generation must equal load plus losses.
  return std::abs(sol.generation - sol.load - sol.losses) + sol.max_mismatch;
}

}  // namespace

std::vector<SelftestCheck> run_selftest(std::uint64_t seed) {
  std::vector<SelftestCheck> checks;
  auto add = [&](std::string name, double limit, auto&& fn) {
    SelftestCheck c{std::move(name), 0.0, limit, false};
    try {
      c.value = fn();
      c.passed = std::isfinite(c.value) && c.value <= limit;
    } catch (const std::exception& e) {
      c.name += fmt::format(" ({})", e.what());
    }
    checks.push_back(std::move(c));
  };

  Rng rng(derive_seed(seed, 3));
  for (Category cat : {Category::kA, Category::kAM, Category::kAMSimple, Category::kB,
                       Category::kC}) {
    for (CellKind cell : {CellKind::kDense, CellKind::kLstm, CellKind::kBiLstm}) {
      if (cat == Category::kAMSimple && cell != CellKind::kLstm) continue;
      ModelSpec spec;
      spec.category = cat;
      spec.cell = cell;
      spec.state_width = 4;
      spec.hidden_width = 5;
      spec.key_width = 3;
      spec.heads = 2;
      spec.seed = rng.index(1u << 30);
      add(fmt::format("gradient {}", spec.name()), 1e-4,
          [&] { return model_gradient_error(spec, rng); });
    }
  }
  add("attention loop reference", 1e-12, [&] { return attention_error(rng); });
  add("feeder power balance", 1e-8, [] { return power_balance_error(); });
  add("feeder nominal efficiency in [0.90, 0.99]", 0.0, [] {
    const FeederSpec spec = default_feeder();
    const double e = compute_efficiency(solve_power_flow(spec, nominal_controls(spec)));
    return e >= 0.90 && e <= 0.99 ? 0.0 : 1.0;
  });
  return checks;
}

}  // namespace attnmpc

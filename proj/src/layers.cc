// SPDX-License-Identifier: Apache-2.0

#include "attnmpc/layers.h"

#include <cmath>

#include <fmt/format.h>

namespace attnmpc {

namespace {

void require_sequence(std::span<const Tensor> xs, std::size_t width,
                      const char* op) {
  if (xs.empty()) throw ShapeError(fmt::format("{}: empty sequence", op));
  const std::size_t batch = xs.front().rows();
  for (const Tensor& x : xs) {
    if (x.rank() != 2 || x.cols() != width || x.rows() != batch) {
      throw ShapeError(fmt::format("{}: step of shape {} where [{}x{}] expected",
                                   op, shape_string(x.shape()), batch, width));
    }
  }
}

}  // namespace

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& e : v) e = rng.uniform(-limit, limit);
  return Tensor::matrix(fan_in, fan_out, std::move(v), true);
}

DenseParams make_dense(std::size_t in, std::size_t out, Activation activation,
                       Rng& rng) {
  return {glorot_uniform(in, out, rng), Tensor::zeros({out}, true), activation};
}

Tensor dense_forward(const DenseParams& p, const Tensor& x) {
  return apply_activation(add_bias(matmul(x, p.weight), p.bias), p.activation);
}

LstmParams make_lstm(std::size_t in, std::size_t hidden, Rng& rng) {
  LstmParams p;
  for (std::size_t g = 0; g < 4; ++g) {
    p.input_weights[g] = glorot_uniform(in, hidden, rng);
    p.recurrent_weights[g] = glorot_uniform(hidden, hidden, rng);
    p.biases[g] = Tensor::zeros({hidden}, true);
  }
  for (double& b : p.biases[kForgetGate].mutable_values()) b = 1.0;
  return p;
}

std::vector<Tensor> lstm_sequence_states(const LstmParams& p,
                                         std::span<const Tensor> xs) {
  require_sequence(xs, p.input_width(), "lstm_sequence_forward");
  const std::size_t batch = xs.front().rows();
  const std::size_t h = p.hidden_width();
  Tensor hidden = Tensor::zeros({batch, h});
  Tensor cell = Tensor::zeros({batch, h});
  std::vector<Tensor> states;
  states.reserve(xs.size());
  for (const Tensor& x : xs) {
    auto gate = [&](std::size_t g, Activation act) {
      Tensor z = add(matmul(x, p.input_weights[g]),
                     matmul(hidden, p.recurrent_weights[g]));
      return apply_activation(add_bias(z, p.biases[g]), act);
    };
    const Tensor i = gate(kInputGate, Activation::kSigmoid);
    const Tensor f = gate(kForgetGate, Activation::kSigmoid);
    const Tensor g = gate(kCandidate, Activation::kTanh);
    const Tensor o = gate(kOutputGate, Activation::kSigmoid);
    cell = add(mul(f, cell), mul(i, g));
    hidden = mul(o, apply_activation(cell, Activation::kTanh));
    states.push_back(hidden);
  }
  return states;
}

Tensor lstm_sequence_forward(const LstmParams& p, std::span<const Tensor> xs) {
  return lstm_sequence_states(p, xs).back();
}

std::vector<Tensor> bilstm_sequence_states(const LstmParams& forward,
                                           const LstmParams& backward,
                                           std::span<const Tensor> xs) {
  const std::vector<Tensor> reversed(xs.rbegin(), xs.rend());
  const std::vector<Tensor> fwd = lstm_sequence_states(forward, xs);
  const std::vector<Tensor> bwd = lstm_sequence_states(backward, reversed);
  std::vector<Tensor> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out.push_back(concat({fwd[i], bwd[xs.size() - 1 - i]}));
  }
  return out;
}

Tensor bilstm_sequence_forward(const LstmParams& forward,
                               const LstmParams& backward,
                               std::span<const Tensor> xs) {
  const std::vector<Tensor> reversed(xs.rbegin(), xs.rend());
  return concat({lstm_sequence_forward(forward, xs),
                 lstm_sequence_forward(backward, reversed)});
}

AttentionParams make_attention(std::size_t state_width, std::size_t key_width,
                               std::size_t heads, std::size_t sequence_length,
                               std::size_t output_width, Rng& rng) {
  if (heads == 0 || key_width == 0 || state_width == 0 || sequence_length == 0) {
    throw ShapeError("make_attention: widths, heads and length must be positive");
  }
  AttentionParams p;
  p.state_width = state_width;
  p.key_width = key_width;
  p.sequence_length = sequence_length;
  for (std::size_t j = 0; j < heads; ++j) {
    AttentionHead head;
    head.query = glorot_uniform(state_width, key_width, rng);
    head.key = glorot_uniform(state_width, key_width, rng);
    head.value = glorot_uniform(state_width, key_width, rng);
    p.heads.push_back(std::move(head));
  }
  if (output_width > 0) {
    p.output = glorot_uniform(heads * key_width * sequence_length, output_width,
                              rng);
  }
  return p;
}

std::vector<Tensor> attend(const AttentionHead& head, std::size_t key_width,
                           std::span<const Tensor> xs) {
  require_sequence(xs, head.query.rows(), "attention");
  const std::size_t t = xs.size();
  std::vector<Tensor> q, k, v;
  for (const Tensor& x : xs) {
    q.push_back(matmul(x, head.query));
    k.push_back(matmul(x, head.key));
    v.push_back(matmul(x, head.value));
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(key_width));
  std::vector<Tensor> out;
  out.reserve(t);
  for (std::size_t i = 0; i < t; ++i) {
    std::vector<Tensor> scores;
    for (std::size_t l = 0; l < t; ++l) {
      scores.push_back(scale(row_dot(q[i], k[l]), inv_scale));
    }
    const Tensor weights = softmax_rows(concat(scores));
    Tensor a = scale_rows(v[0], slice_cols(weights, 0, 1));
    for (std::size_t l = 1; l < t; ++l) {
      a = add(a, scale_rows(v[l], slice_cols(weights, l, 1)));
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Tensor> single_head_attention(const AttentionParams& p,
                                          std::span<const Tensor> xs) {
  if (p.head_count() != 1) {
    throw ShapeError(fmt::format("single_head_attention: {} heads configured",
                                 p.head_count()));
  }
  require_sequence(xs, p.state_width, "single_head_attention");
  return attend(p.heads.front(), p.key_width, xs);
}

Tensor multi_head_attention(const AttentionParams& p,
                            std::span<const Tensor> xs) {
  if (p.head_count() == 0) throw ShapeError("multi_head_attention: no heads");
  require_sequence(xs, p.state_width, "multi_head_attention");
  const std::size_t flat = p.head_count() * p.key_width * xs.size();
  if (!p.output.defined() || p.output.rank() != 2 || p.output.rows() != flat) {
    throw ShapeError(fmt::format(
        "multi_head_attention: W_O {} needs {} rows (H={} * d_k={} * t={})",
        p.output.defined() ? shape_string(p.output.shape()) : "undefined", flat,
        p.head_count(), p.key_width, xs.size()));
  }
  std::vector<Tensor> parts;
  parts.reserve(p.head_count() * xs.size());
  for (const AttentionHead& head : p.heads) {
    for (Tensor& a : attend(head, p.key_width, xs)) parts.push_back(std::move(a));
  }
  return matmul(concat(parts), p.output);
}

}  // namespace attnmpc

// SPDX-License-Identifier: Apache-2.0
//
// Layer vocabulary for the controller networks: dense, LSTM, BiLSTM and
// scaled dot-product self-attention (single and multi-head).
//
// All layers are batched: a "sequence" is a list of t tensors, each holding
// one row per example ([batch x width]). A single example is a batch of one.

#ifndef ATTNMPC_LAYERS_H_
#define ATTNMPC_LAYERS_H_

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "attnmpc/autodiff.h"
#include "attnmpc/rng.h"

namespace attnmpc {

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct DenseParams {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  Activation activation = Activation::kTanh;

  std::size_t input_width() const { return weight.rows(); }
  std::size_t output_width() const { return weight.cols(); }
};

DenseParams make_dense(std::size_t in, std::size_t out, Activation activation,
                       Rng& rng);

// activation(x . W + b)
Tensor dense_forward(const DenseParams& p, const Tensor& x);

enum LstmGate : std::size_t { kInputGate, kForgetGate, kCandidate, kOutputGate };

struct LstmParams {
  // Indexed by LstmGate.
  std::array<Tensor, 4> input_weights;      // [d_in x h]
  std::array<Tensor, 4> recurrent_weights;  // [h x h]
  std::array<Tensor, 4> biases;             // [h]

  std::size_t input_width() const { return input_weights[0].rows(); }
  std::size_t hidden_width() const { return recurrent_weights[0].rows(); }
};

// Forget-gate bias starts at 1, other biases at 0.
LstmParams make_lstm(std::size_t in, std::size_t hidden, Rng& rng);

// Hidden state after every step, starting from zero hidden and cell state.
std::vector<Tensor> lstm_sequence_states(const LstmParams& p,
                                         std::span<const Tensor> xs);
// Final hidden state.
Tensor lstm_sequence_forward(const LstmParams& p, std::span<const Tensor> xs);
// Per-step concatenation of the forward pass over xs and the backward pass
// over reversed xs (realigned to the original order).
std::vector<Tensor> bilstm_sequence_states(const LstmParams& forward,
                                           const LstmParams& backward,
                                           std::span<const Tensor> xs);
// [forward final hidden, backward final hidden] -> [batch x 2h]
Tensor bilstm_sequence_forward(const LstmParams& forward,
                               const LstmParams& backward,
                               std::span<const Tensor> xs);

struct AttentionHead {
  Tensor query;  // [d_x x d_k]
  Tensor key;    // [d_x x d_k]
  Tensor value;  // [d_x x d_k]
};

struct AttentionParams {
  std::vector<AttentionHead> heads;
  // [(H * d_k * t) x d_out]; heads are flattened across time steps before
  // concatenation. Unused (and may be undefined) for single-head attention.
  Tensor output;
  std::size_t state_width = 0;
  std::size_t key_width = 0;
  std::size_t sequence_length = 0;

  std::size_t head_count() const { return heads.size(); }
};

// output_width == 0 leaves W_O undefined.
AttentionParams make_attention(std::size_t state_width, std::size_t key_width,
                               std::size_t heads, std::size_t sequence_length,
                               std::size_t output_width, Rng& rng);

// For each position i: q_i = x_i Wq, k_l = x_l Wk, v_l = x_l Wv,
// S_il = softmax_l(q_i . k_l / sqrt(d_k)), A_i = sum_l S_il v_l.
// Returns [A_1, ..., A_t], each [batch x d_k]. Requires exactly one head.
std::vector<Tensor> single_head_attention(const AttentionParams& p,
                                          std::span<const Tensor> xs);

// concat(head_1, ..., head_H) . W_O with head_j = [A_1, ..., A_t].
Tensor multi_head_attention(const AttentionParams& p,
                            std::span<const Tensor> xs);

// Single-head computation for an arbitrary head; shared by both entry points.
std::vector<Tensor> attend(const AttentionHead& head, std::size_t key_width,
                           std::span<const Tensor> xs);

}  // namespace attnmpc

#endif  // ATTNMPC_LAYERS_H_

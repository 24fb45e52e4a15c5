// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "attnmpc/autodiff.h"
#include "attnmpc/layers.h"
#include "attnmpc/rng.h"
#include "oracles.h"

namespace attnmpc {
namespace {

using oracle::random_tensor;

Tensor identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor::matrix(n, n, v, true);
}

void fill(Tensor t, double value) {
  for (double& v : t.mutable_values()) v = value;
}

LstmParams zero_lstm(std::size_t in, std::size_t h) {
  Rng rng(0);
  LstmParams p = make_lstm(in, h, rng);
  for (int g = 0; g < 4; ++g) {
    fill(p.input_weights[g], 0.0);
    fill(p.recurrent_weights[g], 0.0);
    fill(p.biases[g], 0.0);
  }
  return p;
}

oracle::LstmWeights to_oracle(const LstmParams& p) {
  oracle::LstmWeights w;
  for (int g = 0; g < 4; ++g) {
    w.w[g] = oracle::to_matrix(p.input_weights[g]);
    w.u[g] = oracle::to_matrix(p.recurrent_weights[g]);
    w.b[g].assign(p.biases[g].values().begin(), p.biases[g].values().end());
  }
  return w;
}

TEST(Dense, ZeroParametersGiveZero) {
  Rng rng(1);
  DenseParams p = make_dense(3, 4, Activation::kTanh, rng);
  fill(p.weight, 0.0);
  const Tensor y = dense_forward(p, random_tensor(2, 3, rng));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Dense, IdentityReluPassesNonNegativeInput) {
  DenseParams p{identity(3), Tensor::zeros({3}, true), Activation::kRelu};
  const Tensor x = Tensor::matrix(1, 3, {0.0, 1.5, 2.0});
  const Tensor y = dense_forward(p, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(Dense, InitializationBoundsAndZeroBias) {
  Rng rng(2);
  const DenseParams p = make_dense(10, 6, Activation::kTanh, rng);
  const double limit = std::sqrt(6.0 / 16.0);
  for (double v : p.weight.values()) EXPECT_LE(std::abs(v), limit);
  for (double v : p.bias.values()) EXPECT_EQ(v, 0.0);
}

TEST(Dense, GradientCheck) {
  Rng rng(3);
  for (int s = 0; s < 20; ++s) {
    DenseParams p = make_dense(4, 3, Activation::kTanh, rng);
    fill(p.bias, rng.uniform(-0.5, 0.5));
    const Tensor x = random_tensor(2, 4, rng);
    const Tensor y = random_tensor(2, 3, rng);
    std::vector<Tensor> params{p.weight, p.bias};
    EXPECT_LE(finite_difference_check([&] { return mse_loss(dense_forward(p, x), y); }, params),
              1e-4);
  }
}

TEST(Lstm, ForgetBiasStartsAtOne) {
  Rng rng(4);
  const LstmParams p = make_lstm(3, 4, rng);
  for (double v : p.biases[kForgetGate].values()) EXPECT_EQ(v, 1.0);
  for (double v : p.biases[kInputGate].values()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, ZeroParametersKeepZeroState) {
  Rng rng(5);
  const LstmParams p = zero_lstm(3, 4);
  std::vector<Tensor> xs{random_tensor(1, 3, rng), random_tensor(1, 3, rng)};
  for (const Tensor& h : lstm_sequence_states(p, xs)) {
    for (double v : h.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Lstm, SingleStepIsOneCellApplication) {
  Rng rng(6);
  const LstmParams p = make_lstm(3, 2, rng);
  const Tensor x = random_tensor(1, 3, rng);
  const Tensor h = lstm_sequence_forward(p, std::vector<Tensor>{x});
  // With zero previous state: c = i * g, h = o * tanh(c).
  const auto xv = oracle::to_matrix(x)[0];
  const auto w = to_oracle(p);
  for (std::size_t j = 0; j < 2; ++j) {
    auto gate = [&](int g) { return oracle::project(xv, w.w[g])[j] + w.b[g][j]; };
    const double c = oracle::sigmoid(gate(0)) * std::tanh(gate(2));
    EXPECT_NEAR(h.at(0, j), oracle::sigmoid(gate(3)) * std::tanh(c), 1e-15);
  }
}

TEST(Lstm, MatchesLoopOracle) {
  Rng rng(7);
  for (int s = 0; s < 20; ++s) {
    LstmParams p = make_lstm(4, 5, rng);
    for (int g = 0; g < 4; ++g) {
      for (double& v : p.biases[g].mutable_values()) v = rng.uniform(-1, 1);
    }
    std::vector<Tensor> xs;
    oracle::Matrix xm;
    for (int k = 0; k < 3; ++k) {
      xs.push_back(random_tensor(1, 4, rng));
      xm.push_back(oracle::to_matrix(xs.back())[0]);
    }
    const Tensor h = lstm_sequence_forward(p, xs);
    const auto expected = oracle::lstm_final(to_oracle(p), xm);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(h.at(0, j), expected[j], 1e-12);
  }
}

TEST(Lstm, GradientCheck) {
  Rng rng(8);
  for (int s = 0; s < 20; ++s) {
    LstmParams p = make_lstm(3, 4, rng);
    std::vector<Tensor> xs{random_tensor(2, 3, rng), random_tensor(2, 3, rng),
                           random_tensor(2, 3, rng)};
    const Tensor y = random_tensor(2, 4, rng);
    std::vector<Tensor> params;
    for (int g = 0; g < 4; ++g) {
      params.insert(params.end(), {p.input_weights[g], p.recurrent_weights[g], p.biases[g]});
    }
    EXPECT_LE(finite_difference_check(
                  [&] { return mse_loss(lstm_sequence_forward(p, xs), y); }, params),
              1e-4);
  }
}

TEST(BiLstm, OutputWidthIsTwiceHidden) {
  Rng rng(9);
  const LstmParams f = make_lstm(3, 4, rng);
  const LstmParams b = make_lstm(3, 4, rng);
  std::vector<Tensor> xs{random_tensor(2, 3, rng), random_tensor(2, 3, rng)};
  EXPECT_EQ(bilstm_sequence_forward(f, b, xs).shape(), (Shape{2, 8}));
}

TEST(BiLstm, ZeroParametersGiveZero) {
  Rng rng(10);
  std::vector<Tensor> xs{random_tensor(1, 3, rng), random_tensor(1, 3, rng)};
  const Tensor y = bilstm_sequence_forward(zero_lstm(3, 4), zero_lstm(3, 4), xs);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(BiLstm, PalindromeWithSharedParametersIsSymmetric) {
  Rng rng(11);
  const LstmParams p = make_lstm(3, 4, rng);
  const Tensor a = random_tensor(1, 3, rng);
  const Tensor b = random_tensor(1, 3, rng);
  std::vector<Tensor> xs{a, b, a};
  const Tensor y = bilstm_sequence_forward(p, p, xs);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y.at(0, j), y.at(0, 4 + j));
}

TEST(BiLstm, GradientCheck) {
  Rng rng(12);
  for (int s = 0; s < 20; ++s) {
    LstmParams f = make_lstm(3, 2, rng);
    LstmParams b = make_lstm(3, 2, rng);
    std::vector<Tensor> xs{random_tensor(2, 3, rng), random_tensor(2, 3, rng)};
    const Tensor y = random_tensor(2, 4, rng);
    std::vector<Tensor> params;
    for (const LstmParams* p : {&f, &b}) {
      for (int g = 0; g < 4; ++g) {
        params.insert(params.end(),
                      {p->input_weights[g], p->recurrent_weights[g], p->biases[g]});
      }
    }
    EXPECT_LE(finite_difference_check(
                  [&] { return mse_loss(bilstm_sequence_forward(f, b, xs), y); }, params),
              1e-4);
  }
}

TEST(Attention, SingletonReturnsValueProjection) {
  Rng rng(13);
  const AttentionParams p = make_attention(3, 2, 1, 1, 0, rng);
  const Tensor x = random_tensor(1, 3, rng);
  const auto a = single_head_attention(p, std::vector<Tensor>{x});
  const auto expected = oracle::project(oracle::to_matrix(x)[0],
                                        oracle::to_matrix(p.heads[0].value));
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(a[0].at(0, c), expected[c], 1e-15);
}

TEST(Attention, IdenticalStatesGiveValueProjection) {
  Rng rng(14);
  const AttentionParams p = make_attention(3, 2, 1, 3, 0, rng);
  const Tensor x = random_tensor(1, 3, rng);
  const auto a = single_head_attention(p, std::vector<Tensor>{x, x, x});
  const auto expected = oracle::project(oracle::to_matrix(x)[0],
                                        oracle::to_matrix(p.heads[0].value));
  for (const Tensor& ai : a) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(ai.at(0, c), expected[c], 1e-14);
  }
}

TEST(Attention, HandExample) {
  AttentionParams p;
  p.heads.push_back({identity(2), identity(2), identity(2)});
  p.state_width = 2;
  p.key_width = 2;
  p.sequence_length = 2;
  const auto a = single_head_attention(
      p, std::vector<Tensor>{Tensor::matrix(1, 2, {1, 0}), Tensor::matrix(1, 2, {0, 1})});
  EXPECT_NEAR(a[0].at(0, 0), 0.6698, 5e-5);
  EXPECT_NEAR(a[0].at(0, 1), 0.3302, 5e-5);
  EXPECT_NEAR(a[1].at(0, 0), 0.3302, 5e-5);
  EXPECT_NEAR(a[1].at(0, 1), 0.6698, 5e-5);
}

TEST(Attention, SingleHeadRejectsSeveralHeads) {
  Rng rng(15);
  const AttentionParams p = make_attention(3, 2, 2, 2, 8, rng);
  std::vector<Tensor> xs{random_tensor(1, 3, rng), random_tensor(1, 3, rng)};
  EXPECT_THROW(single_head_attention(p, xs), ShapeError);
}

TEST(MultiHead, OneHeadWithIdentityOutputIsFlattenedSingleHead) {
  Rng rng(16);
  AttentionParams p = make_attention(3, 2, 1, 2, 4, rng);
  p.output = identity(4);
  std::vector<Tensor> xs{random_tensor(1, 3, rng), random_tensor(1, 3, rng)};
  const Tensor y = multi_head_attention(p, xs);
  const auto single = single_head_attention(p, xs);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(y.at(0, i * 2 + c), single[i].at(0, c));
  }
}

TEST(MultiHead, OutputWidthIndependentOfHeads) {
  Rng rng(17);
  for (std::size_t h : {1u, 2u, 4u}) {
    const AttentionParams p = make_attention(3, 2, h, 2, 5, rng);
    std::vector<Tensor> xs{random_tensor(2, 3, rng), random_tensor(2, 3, rng)};
    EXPECT_EQ(multi_head_attention(p, xs).shape(), (Shape{2, 5}));
  }
}

TEST(MultiHead, WrongOutputRowsAreRejected) {
  Rng rng(18);
  AttentionParams p = make_attention(3, 2, 2, 2, 5, rng);
  std::vector<Tensor> xs{random_tensor(1, 3, rng), random_tensor(1, 3, rng),
                         random_tensor(1, 3, rng)};
  EXPECT_THROW(multi_head_attention(p, xs), ShapeError);
}

TEST(MultiHead, ZeroValueWeightsGiveZero) {
  Rng rng(19);
  AttentionParams p = make_attention(3, 2, 3, 2, 4, rng);
  for (auto& h : p.heads) fill(h.value, 0.0);
  std::vector<Tensor> xs{random_tensor(1, 3, rng), random_tensor(1, 3, rng)};
  const Tensor y = multi_head_attention(p, xs);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(MultiHead, MatchesLoopOracleTwoHeads) {
  Rng rng(20);
  const AttentionParams p = make_attention(4, 3, 2, 2, 5, rng);
  std::vector<Tensor> xs{random_tensor(1, 4, rng), random_tensor(1, 4, rng)};
  oracle::Matrix xm{oracle::to_matrix(xs[0])[0], oracle::to_matrix(xs[1])[0]};
  std::vector<oracle::Matrix> wq, wk, wv;
  for (const auto& h : p.heads) {
    wq.push_back(oracle::to_matrix(h.query));
    wk.push_back(oracle::to_matrix(h.key));
    wv.push_back(oracle::to_matrix(h.value));
  }
  const auto expected = oracle::multi_head(xm, wq, wk, wv, oracle::to_matrix(p.output));
  const Tensor y = multi_head_attention(p, xs);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(y.at(0, c), expected[c], 1e-12);
}

TEST(Attention, PermutationCovariant) {
  Rng rng(21);
  const AttentionParams p = make_attention(3, 2, 1, 3, 0, rng);
  std::vector<Tensor> xs{random_tensor(1, 3, rng), random_tensor(1, 3, rng),
                         random_tensor(1, 3, rng)};
  const std::vector<std::size_t> perm{2, 0, 1};
  std::vector<Tensor> permuted;
  for (std::size_t i : perm) permuted.push_back(xs[i]);
  const auto a = single_head_attention(p, xs);
  const auto b = single_head_attention(p, permuted);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(b[i].at(0, c), a[perm[i]].at(0, c), 1e-14);
  }
}

TEST(Attention, FiniteForLargeInputs) {
  Rng rng(22);
  const AttentionParams p = make_attention(3, 2, 2, 2, 3, rng);
  std::vector<Tensor> xs{random_tensor(1, 3, rng, -1e3, 1e3), random_tensor(1, 3, rng, -1e3, 1e3)};
  const Tensor y = multi_head_attention(p, xs);
  for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Attention, GradientCheckSingleAndMultiHead) {
  Rng rng(23);
  for (int s = 0; s < 20; ++s) {
    const AttentionParams p = make_attention(4, 3, 2, 3, 2, rng);
    std::vector<Tensor> xs{random_tensor(2, 4, rng, -1, 1, true),
                           random_tensor(2, 4, rng, -1, 1, true),
                           random_tensor(2, 4, rng, -1, 1, true)};
    const Tensor y = random_tensor(2, 2, rng);
    std::vector<Tensor> params = xs;
    for (const auto& h : p.heads) params.insert(params.end(), {h.query, h.key, h.value});
    params.push_back(p.output);
    EXPECT_LE(finite_difference_check(
                  [&] { return mse_loss(multi_head_attention(p, xs), y); }, params),
              1e-4);

    AttentionParams single = p;
    single.heads.resize(1);
    std::vector<Tensor> sparams{single.heads[0].query, single.heads[0].key,
                                single.heads[0].value};
    auto f = [&] {
      Tensor total = Tensor::scalar(0.0);
      for (const Tensor& a : single_head_attention(single, xs)) {
        total = add(total, sum(mul(a, a)));
      }
      return total;
    };
    EXPECT_LE(finite_difference_check(f, sparams), 1e-4);
  }
}

// Randomized equivalence against the plain-loop reference, small shapes.
TEST(Attention, RandomInstancesMatchLoopReference) {
  Rng rng(24);
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    const std::size_t t = 1 + rng.index(4);
    const std::size_t dx = 1 + rng.index(8);
    const std::size_t dk = 1 + rng.index(8);
    const std::size_t heads = 1 + rng.index(4);
    const std::size_t dout = 1 + rng.index(6);
    const AttentionParams p = make_attention(dx, dk, heads, t, dout, rng);
    std::vector<Tensor> xs;
    oracle::Matrix xm;
    for (std::size_t k = 0; k < t; ++k) {
      xs.push_back(random_tensor(1, dx, rng, -2, 2));
      xm.push_back(oracle::to_matrix(xs.back())[0]);
    }
    std::vector<oracle::Matrix> wq, wk, wv;
    for (const auto& h : p.heads) {
      wq.push_back(oracle::to_matrix(h.query));
      wk.push_back(oracle::to_matrix(h.key));
      wv.push_back(oracle::to_matrix(h.value));
    }
    const Tensor y = multi_head_attention(p, xs);
    const auto expected = oracle::multi_head(xm, wq, wk, wv, oracle::to_matrix(p.output));
    for (std::size_t c = 0; c < dout; ++c) worst = std::max(worst, std::abs(y.at(0, c) - expected[c]));

    AttentionParams single = p;
    single.heads.resize(1);
    const auto a = single_head_attention(single, xs);
    const auto ea = oracle::attention_head(xm, wq[0], wk[0], wv[0]);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t c = 0; c < dk; ++c) worst = std::max(worst, std::abs(a[i].at(0, c) - ea[i][c]));
    }
  }
  EXPECT_LE(worst, 1e-12);
}

}  // namespace
}  // namespace attnmpc

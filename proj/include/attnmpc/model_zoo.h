// SPDX-License-Identifier: Apache-2.0
//
// Controller network families.
//
//   A          single-head attention -> cell -> concat(., Dense(u_prev)) -> 2 Dense -> out
//   AM         multi-head attention  -> cell -> concat(., Dense(u_prev)) -> 2 Dense -> out
//   AM_simple  multi-head attention  -> LSTM -> concat(., u_prev)        -> 1 Dense -> out
//   B          cell -> concat(., Dense(u_prev)) -> 2 Dense -> out
//   C          cell -> 2 Dense -> out  (no control input)
//
// The cell is a Dense layer over the flattened sequence, an LSTM or a BiLSTM.
// Hidden layers use tanh, the output layer relu, so controls are encoded into
// [0, 1] (see ControlCodec).

#ifndef ATTNMPC_MODEL_ZOO_H_
#define ATTNMPC_MODEL_ZOO_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attnmpc/autodiff.h"
#include "attnmpc/feeder.h"
#include "attnmpc/layers.h"

namespace attnmpc {

inline constexpr std::size_t kControlWidth = 3;
using EncodedControls = std::array<double, kControlWidth>;

// Maps controls to non-negative network targets:
//   tap -> (tap - tap_min) / (tap_max - tap_min), capacitor -> {0, 1},
//   angle -> angle / max_angle.
struct ControlCodec {
  ControlLimits limits;

  EncodedControls encode(const ControlVector& u) const;
  // Inverse affine map only; no clamping or snapping.
  EncodedControls decode(const EncodedControls& e) const;
};

enum class Category { kA, kAM, kAMSimple, kB, kC };
enum class CellKind { kDense, kLstm, kBiLstm };

const char* category_name(Category c);
const char* cell_name(CellKind c);
Category parse_category(const std::string& s);
CellKind parse_cell(const std::string& s);

struct ModelSpec {
  Category category = Category::kB;
  CellKind cell = CellKind::kLstm;
  std::size_t sequence_length = 2;
  std::size_t state_width = 8;
  std::size_t control_width = kControlWidth;
  std::size_t hidden_width = 64;
  std::size_t key_width = 32;
  std::size_t heads = 4;  // AM variants; Category A always uses one head
  std::size_t recurrent_layers = 1;
  std::uint64_t seed = 42;

  bool uses_controls() const { return category != Category::kC; }
  bool uses_attention() const {
    return category == Category::kA || category == Category::kAM ||
           category == Category::kAMSimple;
  }
  // e.g. "AM_simple-LSTM"
  std::string name() const;
};

// Throws std::invalid_argument for invalid combinations or widths.
void validate_model_spec(const ModelSpec& spec);

// Per-feature affine normalization of state inputs: (x - mean) / scale.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  std::vector<double> apply(const std::vector<double>& x) const;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Model {
 public:
  const ModelSpec& spec() const { return spec_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;

  // Batched forward in network space: u_prev is [batch x d_u] (ignored by
  // Category C and may be undefined there), states holds t tensors of
  // [batch x d_x]. Returns [batch x d_u].
  Tensor forward(const Tensor& u_prev, const std::vector<Tensor>& states) const;

  // Deep copy; parameters are not shared with the original.
  Model clone() const;

  // Copies parameter values from another model with the same structure.
  void assign_parameters(const Model& other);

  ControlCodec codec;
  FeatureScaler scaler;

  // Exposed for degenerate-case tests.
  std::optional<AttentionParams>& attention() { return attention_; }

 private:
  friend Model build_model(const ModelSpec& spec);
  friend Model load_checkpoint(const std::string& path);

  void register_parameters();
  std::vector<Tensor> state_features(const std::vector<Tensor>& states) const;

  ModelSpec spec_;
  std::optional<AttentionParams> attention_;
  std::optional<DenseParams> sequence_dense_;  // Dense cell
  std::vector<LstmParams> forward_cells_;      // LSTM / BiLSTM cells
  std::vector<LstmParams> backward_cells_;     // BiLSTM only
  std::optional<DenseParams> control_dense_;
  std::vector<DenseParams> hidden_;
  DenseParams output_;
  std::vector<NamedTensor> params_;
};

Model build_model(const ModelSpec& spec);

// u_i = f(u_{i-1}, x_{i-1}, ..., x_i): encodes u_prev, normalizes the states
// with the model's scaler and returns the encoded prediction [1 x d_u].
Tensor predict_controls(const Model& m, const ControlVector& u_prev,
                        const std::vector<StateVector>& states);

std::size_t parameter_count(const Model& m);

// Text checkpoint: versioned header with the spec, codec and scaler, then
// one named block per parameter. Values use shortest round-trip formatting,
// so save/load is bit-exact.
void save_checkpoint(const Model& m, const std::string& path,
                     const std::string& provenance = {});
Model load_checkpoint(const std::string& path);

}  // namespace attnmpc

#endif  // ATTNMPC_MODEL_ZOO_H_

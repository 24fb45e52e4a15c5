// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense double-precision tensors.
//
// A Tensor is a shared handle to a graph node. Operations whose inputs require
// gradients record a backward rule on the output node; backward() walks the
// resulting DAG once in reverse topological order and accumulates gradients
// into every reachable node. Graphs are owned by the tensors that reference
// them, so independent graphs built on different threads share nothing.

#ifndef ATTNMPC_AUTODIFF_H_
#define ATTNMPC_AUTODIFF_H_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "attnmpc/errors.h"

namespace attnmpc {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

enum class Activation { kTanh, kRelu, kSigmoid };

const char* activation_name(Activation kind);

class Tensor {
 public:
  struct Node;

  // An undefined tensor; defined() is false.
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  // Rank-1 tensors are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  // Empty until a gradient has been allocated for this node.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Times this node's backward rule has run; instrumentation for tests.
  std::size_t backward_visits() const;

  // Copy of the values with no graph history.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread while in scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// Adds a length-n bias to every row of an [m x n] tensor.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor apply_activation(const Tensor& x, Activation kind);
// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& x);
// Concatenation along the last axis.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
// Mean of squared differences; returns a scalar.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// Sum of all elements; returns a scalar.
Tensor sum(const Tensor& x);
// Columns [begin, begin + count) of an [m x n] tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
// Row-wise dot products of two [m x n] tensors -> [m x 1].
Tensor row_dot(const Tensor& a, const Tensor& b);
// Multiplies row r of an [m x n] tensor by s[r]; s is [m x 1].
Tensor scale_rows(const Tensor& x, const Tensor& s);

// Accumulates d(loss)/d(node) into every node reachable from a scalar loss.
// Returns the number of graph nodes visited.
std::size_t backward(const Tensor& loss);

// Largest relative disagreement between the analytic gradient of f with
// respect to params and a five-point central difference with step eps:
//   max |analytic - numeric| / max(|analytic|, |numeric|, floor),
// floor = 1e-8 * max(1, |f|). The floor sits well above the roundoff of the
// stencil (about 1e-14 * |f|), so exactly-zero gradients compare as zero.
// f must rebuild its graph from the current parameter values on every call.
double finite_difference_check(const std::function<Tensor()>& f,
                               std::span<Tensor> params, double eps = 1e-3);
double finite_difference_check(const std::function<Tensor()>& f, Tensor params,
                               double eps = 1e-3);

}  // namespace attnmpc

#endif  // ATTNMPC_AUTODIFF_H_

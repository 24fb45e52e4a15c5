// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNMPC_ERRORS_H_
#define ATTNMPC_ERRORS_H_

#include <stdexcept>
#include <string>

namespace attnmpc {

// Tensor or layer operands with incompatible shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/inf encountered, divergent training, or a failed numerical check.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Power flow did not reach the mismatch tolerance.
class DivergedError : public NumericalError {
 public:
  DivergedError(const std::string& what, double last_mismatch)
      : NumericalError(what), last_mismatch_(last_mismatch) {}
  double last_mismatch() const { return last_mismatch_; }

 private:
  double last_mismatch_;
};

// Power flow solution with a collapsed bus voltage.
class InfeasibleError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// A multi-step simulation failed; carries the failing step.
class TrajectoryError : public NumericalError {
 public:
  TrajectoryError(const std::string& what, std::size_t step)
      : NumericalError(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Malformed input file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace attnmpc

#endif  // ATTNMPC_ERRORS_H_

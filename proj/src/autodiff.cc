// SPDX-License-Identifier: Apache-2.0

#include "attnmpc/autodiff.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>
#include <utility>

#include <Eigen/Core>
#include <fmt/format.h>

namespace attnmpc {

struct Tensor::Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  std::size_t visits = 0;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

namespace {

using Node = Tensor::Node;
using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConst = Eigen::Map<const RowMajor>;
using MapMut = Eigen::Map<RowMajor>;

thread_local bool grad_enabled = true;

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::size_t rows_of(const Node& n) {
  return n.shape.size() >= 2 ? n.shape[0] : 1;
}
std::size_t cols_of(const Node& n) {
  return n.shape.empty() ? 1 : n.shape.back();
}

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

// Wires inputs and a backward rule onto out when any input needs gradients.
Tensor record(std::shared_ptr<Node> out,
              std::vector<std::shared_ptr<Node>> inputs,
              std::function<void(Node&)> backward_fn) {
  if (grad_enabled) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const auto& n) { return n->requires_grad; });
    if (needs) {
      out->requires_grad = true;
      out->inputs = std::move(inputs);
      out->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(out));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(fmt::format("{}: undefined tensor", op));
}

void require_matrix(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2) {
    throw ShapeError(fmt::format("{}: expected a matrix, got {}", op,
                                 shape_string(t.shape())));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op,
                                 shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

const char* activation_name(Activation kind) {
  switch (kind) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kRelu:
      return "relu";
    case Activation::kSigmoid:
      return "sigmoid";
  }
  return "?";
}

// --- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive");
  }
  if (product(shape) != values.size()) {
    throw ShapeError(fmt::format("shape {} does not hold {} values",
                                 shape_string(shape), values.size()));
  }
  node_ = make_node(std::move(shape), std::move(values));
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->ensure_grad();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values, bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::size_t Tensor::rows() const { return rows_of(*node_); }
std::size_t Tensor::cols() const { return cols_of(*node_); }
std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError(fmt::format("item() on tensor of shape {}",
                                 shape_string(shape())));
  }
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return node_->value[row * cols() + col];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::size_t Tensor::backward_visits() const { return node_->visits; }

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

// --- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError(fmt::format("matmul: inner dimensions differ, {} . {}",
                                 shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
  auto out = make_node({m, n}, std::vector<double>(m * n));
  MapMut(out->value.data(), m, n).noalias() =
      MapConst(a.values().data(), m, k) * MapConst(b.values().data(), k, n);
  return record(out, {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    MapConst dout(self.grad.data(), m, n);
    if (an.requires_grad) {
      an.ensure_grad();
      MapMut(an.grad.data(), m, k).noalias() +=
          dout * MapConst(bn.value.data(), k, n).transpose();
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      MapMut(bn.grad.data(), k, n).noalias() +=
          MapConst(an.value.data(), m, k).transpose() * dout;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  require_defined(bias, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.rank() != 1 || bias.size() != n) {
    throw ShapeError(fmt::format("add_bias: bias {} does not match width of {}",
                                 shape_string(bias.shape()),
                                 shape_string(x.shape())));
  }
  std::vector<double> v(x.values().begin(), x.values().end());
  const auto b = bias.values();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) v[r * n + c] += b[c];
  }
  auto out = make_node(x.shape(), std::move(v));
  return record(out, {x.node(), bias.node()}, [m, n](Node& self) {
    Node& xn = *self.inputs[0];
    Node& bn = *self.inputs[1];
    if (xn.requires_grad) {
      xn.ensure_grad();
      for (std::size_t i = 0; i < m * n; ++i) xn.grad[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) bn.grad[c] += self.grad[r * n + c];
      }
    }
  });
}

Tensor apply_activation(const Tensor& x, Activation kind) {
  require_defined(x, "apply_activation");
  std::vector<double> v(x.size());
  const auto in = x.values();
  switch (kind) {
    case Activation::kTanh:
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(in[i]);
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = in[i] > 0 ? in[i] : 0.0;
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = 1.0 / (1.0 + std::exp(-in[i]));
      }
      break;
  }
  auto out = make_node(x.shape(), std::move(v));
  return record(out, {x.node()}, [kind](Node& self) {
    Node& xn = *self.inputs[0];
    xn.ensure_grad();
    const auto& y = self.value;
    for (std::size_t i = 0; i < y.size(); ++i) {
      double d = 0.0;
      switch (kind) {
        case Activation::kTanh:
          d = 1.0 - y[i] * y[i];
          break;
        case Activation::kRelu:
          d = xn.value[i] > 0 ? 1.0 : 0.0;
          break;
        case Activation::kSigmoid:
          d = y[i] * (1.0 - y[i]);
          break;
      }
      xn.grad[i] += self.grad[i] * d;
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  const auto in = x.values();
  std::vector<double> v(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = in.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      v[r * n + c] = std::exp(row[c] - mx);
      total += v[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) v[r * n + c] /= total;
  }
  auto out = make_node(x.shape(), std::move(v));
  return record(out, {x.node()}, [m, n](Node& self) {
    Node& xn = *self.inputs[0];
    xn.ensure_grad();
    // dx = y * (dy - <dy, y>) per row
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = self.value.data() + r * n;
      const double* dy = self.grad.data() + r * n;
      double inner = 0.0;
      for (std::size_t c = 0; c < n; ++c) inner += dy[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) {
        xn.grad[r * n + c] += y[c] * (dy[c] - inner);
      }
    }
  });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const Tensor& p : parts) require_defined(p, "concat");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw ShapeError("concat: scalar inputs");
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() ||
        !std::equal(s.begin(), s.end() - 1, first.begin())) {
      throw ShapeError(fmt::format("concat: {} incompatible with {}",
                                   shape_string(s), shape_string(first)));
    }
    total += s.back();
  }
  const std::size_t outer = product(first) / first.back();
  Shape shape = first;
  shape.back() = total;
  std::vector<double> v(outer * total);
  std::vector<std::size_t> widths;
  std::vector<std::shared_ptr<Node>> inputs;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape().back();
    const auto src = p.values();
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy_n(src.data() + r * w, w, v.data() + r * total + offset);
    }
    offset += w;
    widths.push_back(w);
    inputs.push_back(p.node());
  }
  auto out = make_node(std::move(shape), std::move(v));
  return record(out, std::move(inputs),
                [outer, total, widths = std::move(widths)](Node& self) {
                  std::size_t off = 0;
                  for (std::size_t i = 0; i < widths.size(); ++i) {
                    Node& in = *self.inputs[i];
                    const std::size_t w = widths[i];
                    if (in.requires_grad) {
                      in.ensure_grad();
                      for (std::size_t r = 0; r < outer; ++r) {
                        for (std::size_t c = 0; c < w; ++c) {
                          in.grad[r * w + c] += self.grad[r * total + off + c];
                        }
                      }
                    }
                    off += w;
                  }
                });
}

Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  const auto p = pred.values();
  const auto t = target.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  const double count = static_cast<double>(p.size());
  auto out = make_node({}, {acc / count});
  return record(out, {pred.node(), target.node()}, [count](Node& self) {
    Node& pn = *self.inputs[0];
    Node& tn = *self.inputs[1];
    const double g = self.grad[0] * 2.0 / count;
    if (pn.requires_grad) {
      pn.ensure_grad();
      for (std::size_t i = 0; i < pn.value.size(); ++i) {
        pn.grad[i] += g * (pn.value[i] - tn.value[i]);
      }
    }
    if (tn.requires_grad) {
      tn.ensure_grad();
      for (std::size_t i = 0; i < tn.value.size(); ++i) {
        tn.grad[i] -= g * (pn.value[i] - tn.value[i]);
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  auto out = make_node(a.shape(), std::move(v));
  return record(out, {a.node(), b.node()}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      in->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  auto out = make_node(a.shape(), std::move(v));
  return record(out, {a.node(), b.node()}, [](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    if (an.requires_grad) {
      an.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        an.grad[i] += self.grad[i] * bn.value[i];
      }
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        bn.grad[i] += self.grad[i] * an.value[i];
      }
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  require_defined(x, "scale");
  std::vector<double> v(x.values().begin(), x.values().end());
  for (double& e : v) e *= factor;
  auto out = make_node(x.shape(), std::move(v));
  return record(out, {x.node()}, [factor](Node& self) {
    Node& xn = *self.inputs[0];
    xn.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      xn.grad[i] += factor * self.grad[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  const auto v = x.values();
  auto out = make_node({}, {std::accumulate(v.begin(), v.end(), 0.0)});
  return record(out, {x.node()}, [](Node& self) {
    Node& xn = *self.inputs[0];
    xn.ensure_grad();
    for (double& g : xn.grad) g += self.grad[0];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (count == 0 || begin + count > n) {
    throw ShapeError(fmt::format("slice_cols: [{}, {}) outside {}", begin,
                                 begin + count, shape_string(x.shape())));
  }
  std::vector<double> v(m * count);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(x.values().data() + r * n + begin, count, v.data() + r * count);
  }
  auto out = make_node({m, count}, std::move(v));
  return record(out, {x.node()}, [m, n, begin, count](Node& self) {
    Node& xn = *self.inputs[0];
    xn.ensure_grad();
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < count; ++c) {
        xn.grad[r * n + begin + c] += self.grad[r * count + c];
      }
    }
  });
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  require_matrix(a, "row_dot");
  require_same_shape(a, b, "row_dot");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> v(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      v[r] += a.values()[r * n + c] * b.values()[r * n + c];
    }
  }
  auto out = make_node({m, 1}, std::move(v));
  return record(out, {a.node(), b.node()}, [m, n](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    if (an.requires_grad) an.ensure_grad();
    if (bn.requires_grad) bn.ensure_grad();
    for (std::size_t r = 0; r < m; ++r) {
      const double g = self.grad[r];
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t i = r * n + c;
        if (an.requires_grad) an.grad[i] += g * bn.value[i];
        if (bn.requires_grad) bn.grad[i] += g * an.value[i];
      }
    }
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_matrix(x, "scale_rows");
  require_matrix(s, "scale_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (s.rows() != m || s.cols() != 1) {
    throw ShapeError(fmt::format("scale_rows: scale {} does not match {}",
                                 shape_string(s.shape()),
                                 shape_string(x.shape())));
  }
  std::vector<double> v(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      v[r * n + c] = x.values()[r * n + c] * s.values()[r];
    }
  }
  auto out = make_node({m, n}, std::move(v));
  return record(out, {x.node(), s.node()}, [m, n](Node& self) {
    Node& xn = *self.inputs[0];
    Node& sn = *self.inputs[1];
    if (xn.requires_grad) xn.ensure_grad();
    if (sn.requires_grad) sn.ensure_grad();
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t i = r * n + c;
        if (xn.requires_grad) xn.grad[i] += self.grad[i] * sn.value[r];
        if (sn.requires_grad) sn.grad[r] += self.grad[i] * xn.value[i];
      }
    }
  });
}

// --- backward -------------------------------------------------------------

std::size_t backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw ShapeError(fmt::format("backward: loss must be scalar, got {}",
                                 shape_string(loss.shape())));
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) return 0;

  // Iterative post-order DFS gives a topological order of the DAG.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    ++node->visits;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
  return order.size();
}

double finite_difference_check(const std::function<Tensor()>& f,
                               std::span<Tensor> params, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("finite_difference_check: eps <= 0");
  for (Tensor& p : params) p.zero_grad();
  const Tensor loss = f();
  if (!std::isfinite(loss.item())) {
    throw NumericalError("finite_difference_check: non-finite loss");
  }
  backward(loss);
  const double floor = 1e-8 * std::max(1.0, std::abs(loss.item()));

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const std::vector<double> analytic = p.grad().empty()
        ? std::vector<double>(p.size(), 0.0)
        : std::vector<double>(p.grad().begin(), p.grad().end());
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        return f().item();
      };
      // Five-point stencil: O(eps^4) truncation lets eps stay large enough
      // that cancellation noise does not swamp small gradients. Differences
      // are taken first so a flat direction gives exactly zero.
      const double m2 = at(-2 * eps), m1 = at(-eps), p1 = at(eps), p2 = at(2 * eps);
      const double numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
      values[i] = saved;
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
        throw NumericalError(fmt::format(
            "finite_difference_check: non-finite gradient at param {} entry {}",
            pi, i));
      }
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

double finite_difference_check(const std::function<Tensor()>& f, Tensor params,
                               double eps) {
  return finite_difference_check(f, std::span<Tensor>(&params, 1), eps);
}

}  // namespace attnmpc

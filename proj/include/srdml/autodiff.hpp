#pragma once

// Define-by-run reverse-mode differentiation over dense tensors.
//
// Every operation appends a node to a Tape. `gradient()` walks the tape
// backwards and expresses each local derivative with the same kernels, so the
// gradients it returns are ordinary tape nodes and can be differentiated again
// (double backprop). Gradients accumulate by summation over fan-out.
//
// A Tape is confined to one thread; independent tapes share nothing.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "srdml/tensor.hpp"

namespace srdml::ad {

enum class Kernel : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  ScalarMul,
  MatMul,
  Transpose,
  Sum,
  Mean,
  Broadcast,
  Reshape,
  Square,
  Sqrt,
  AbsSmooth,
  Exp,
  Log,
  Tanh,
  Sigmoid,
  Softplus,
};

const char* kernel_name(Kernel k) noexcept;

inline constexpr std::size_t kNoParent = static_cast<std::size_t>(-1);

struct Node {
  Tensor value;
  Kernel kernel = Kernel::Leaf;
  std::size_t lhs = kNoParent;
  std::size_t rhs = kNoParent;
  bool requires_grad = false;
  double factor = 0.0;  // ScalarMul
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Node& node() const;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return node().requires_grad; }
  /// Value of a one-element node.
  double item() const { return value().item(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node from a shape and row-major data; throws std::invalid_argument on a length mismatch.
  Var leaf(Shape shape, std::vector<double> data, bool requires_grad);
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var scalar(double value) { return constant(Tensor::scalar(value)); }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  Var record(Tensor value, Kernel kernel, std::size_t lhs, std::size_t rhs = kNoParent, double factor = 0.0);

 private:
  std::deque<Node> nodes_;
};

// Elementwise binary kernels accept equal shapes or a one-element operand,
// which is broadcast.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scalar_mul(double factor, Var a);
/// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
Var transpose(Var a);
/// Sum / mean of all entries as a rank-0 scalar.
Var sum(Var a);
Var mean(Var a);
/// Broadcast a one-element node to `shape`.
Var broadcast(Var a, Shape shape);
Var reshape(Var a, Shape shape);
Var square(Var a);
Var sqrt(Var a);
/// sqrt(x^2 + eps) - sqrt(eps): zero at zero and twice differentiable.
Var abs_smooth(Var a);
Var exp(Var a);
/// Throws DomainError on a non-positive entry.
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);

/// Row sums of a rank-2 node: [n,k] -> [n,1].
Var row_sum(Var a);
/// Repeat a column [n,1] across k columns: [n,1] -> [n,k].
Var repeat_cols(Var column, std::size_t k);

/// d root / d w for each w in `wrt`, same shapes as w. With `higher_order`
/// the results stay connected to the tape and can be differentiated again;
/// otherwise they are detached constants. A wrt node that root does not depend
/// on receives an explicit zero tensor.
std::vector<Var> gradient(Var root, std::span<const Var> wrt, bool higher_order);
inline Var gradient(Var root, Var wrt, bool higher_order) {
  return gradient(root, std::span<const Var>(&wrt, 1), higher_order).front();
}

using ScalarFunction = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + eps)
/// comparing tape gradients with central differences of step `step`.
double finite_difference_check(const ScalarFunction& f, const Tensor& point, double step, double eps = 1e-10);

}  // namespace srdml::ad

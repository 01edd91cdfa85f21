#include "srdml/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "srdml/kernels.hpp"

namespace srdml::ad {

namespace {

using kernels::BinaryOp;
using kernels::UnaryOp;

void same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

Shape binary_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1 && (a.numel() != 1 || a.rank() >= b.rank())) return a.shape();
  if (a.numel() == 1) return b.shape();
  throw ShapeError(std::string(what) + ": shapes " + shape_to_string(a.shape()) + " and " +
                   shape_to_string(b.shape()) + " do not conform");
}

Var binary_op(Kernel kind, BinaryOp op, Var a, Var b, const char* what) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = Tensor::zeros(binary_shape(av, bv, what));
  kernels::binary(op, av.data(), bv.data(), out.data());
  return a.tape().record(std::move(out), kind, a.id(), b.id());
}

Var unary_op(Kernel kind, UnaryOp op, Var a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::zeros(av.shape());
  kernels::unary(op, av.data(), out.data());
  return a.tape().record(std::move(out), kind, a.id());
}

/// Sum a broadcast gradient back down to the operand's shape.
Var unbroadcast(Var g, const Shape& shape) {
  if (g.shape() == shape) return g;
  return reshape(sum(g), shape);
}

}  // namespace

const char* kernel_name(Kernel k) noexcept {
  switch (k) {
    case Kernel::Leaf: return "leaf";
    case Kernel::Add: return "add";
    case Kernel::Sub: return "sub";
    case Kernel::Mul: return "mul";
    case Kernel::Div: return "div";
    case Kernel::Neg: return "neg";
    case Kernel::ScalarMul: return "scalar_mul";
    case Kernel::MatMul: return "matmul";
    case Kernel::Transpose: return "transpose";
    case Kernel::Sum: return "sum";
    case Kernel::Mean: return "mean";
    case Kernel::Broadcast: return "broadcast";
    case Kernel::Reshape: return "reshape";
    case Kernel::Square: return "square";
    case Kernel::Sqrt: return "sqrt";
    case Kernel::AbsSmooth: return "abs_smooth";
    case Kernel::Exp: return "exp";
    case Kernel::Log: return "log";
    case Kernel::Tanh: return "tanh";
    case Kernel::Sigmoid: return "sigmoid";
    case Kernel::Softplus: return "softplus";
  }
  return "?";
}

const Node& Var::node() const { return tape_->node(id_); }
const Tensor& Var::value() const { return node().value; }

Var Tape::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  return leaf(Tensor(std::move(shape), std::move(data)), requires_grad);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.kernel = Kernel::Leaf;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, Kernel kernel, std::size_t lhs, std::size_t rhs, double factor) {
  Node n;
  n.value = std::move(value);
  n.kernel = kernel;
  n.lhs = lhs;
  n.rhs = rhs;
  n.factor = factor;
  n.requires_grad = (lhs != kNoParent && nodes_[lhs].requires_grad) || (rhs != kNoParent && nodes_[rhs].requires_grad);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var add(Var a, Var b) { return binary_op(Kernel::Add, BinaryOp::Add, a, b, "add"); }
Var sub(Var a, Var b) { return binary_op(Kernel::Sub, BinaryOp::Sub, a, b, "sub"); }
Var mul(Var a, Var b) { return binary_op(Kernel::Mul, BinaryOp::Mul, a, b, "mul"); }
Var div(Var a, Var b) { return binary_op(Kernel::Div, BinaryOp::Div, a, b, "div"); }
Var neg(Var a) { return unary_op(Kernel::Neg, UnaryOp::Neg, a); }

Var scalar_mul(double factor, Var a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::zeros(av.shape());
  kernels::scale(factor, av.data(), out.data());
  return a.tape().record(std::move(out), Kernel::ScalarMul, a.id(), kNoParent, factor);
}

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: shapes " + shape_to_string(av.shape()) + " and " + shape_to_string(bv.shape()) +
                     " do not conform");
  }
  const auto m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = Tensor::zeros({m, n});
  kernels::matmul(av.data(), bv.data(), out.data(), m, k, n);
  return a.tape().record(std::move(out), Kernel::MatMul, a.id(), b.id());
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_to_string(av.shape()));
  Tensor out = Tensor::zeros({av.cols(), av.rows()});
  kernels::transpose(av.data(), out.data(), av.rows(), av.cols());
  return a.tape().record(std::move(out), Kernel::Transpose, a.id());
}

Var sum(Var a) { return a.tape().record(Tensor::scalar(kernels::sum(a.value().data())), Kernel::Sum, a.id()); }

Var mean(Var a) {
  const Tensor& av = a.value();
  if (av.numel() == 0) throw ShapeError("mean of empty tensor");
  const double m = kernels::sum(av.data()) / static_cast<double>(av.numel());
  return a.tape().record(Tensor::scalar(m), Kernel::Mean, a.id());
}

Var broadcast(Var a, Shape shape) {
  if (a.value().numel() != 1) throw ShapeError("broadcast: operand must have one element");
  return a.tape().record(Tensor::filled(std::move(shape), a.value()[0]), Kernel::Broadcast, a.id());
}

Var reshape(Var a, Shape shape) {
  if (shape_numel(shape) != a.value().numel()) {
    throw ShapeError("reshape: " + shape_to_string(a.shape()) + " -> " + shape_to_string(shape));
  }
  return a.tape().record(Tensor(std::move(shape), a.value().storage()), Kernel::Reshape, a.id());
}

Var square(Var a) { return unary_op(Kernel::Square, UnaryOp::Square, a); }

Var sqrt(Var a) {
  for (double v : a.value().data()) {
    if (v < 0) throw DomainError("sqrt of negative value");
  }
  return unary_op(Kernel::Sqrt, UnaryOp::Sqrt, a);
}

Var abs_smooth(Var a) { return unary_op(Kernel::AbsSmooth, UnaryOp::AbsSmooth, a); }
Var exp(Var a) { return unary_op(Kernel::Exp, UnaryOp::Exp, a); }

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0)) throw DomainError("log of non-positive value");
  }
  return unary_op(Kernel::Log, UnaryOp::Log, a);
}

Var tanh(Var a) { return unary_op(Kernel::Tanh, UnaryOp::Tanh, a); }
Var sigmoid(Var a) { return unary_op(Kernel::Sigmoid, UnaryOp::Sigmoid, a); }
Var softplus(Var a) { return unary_op(Kernel::Softplus, UnaryOp::Softplus, a); }

Var row_sum(Var a) {
  const auto k = a.value().cols();
  return matmul(a, a.tape().constant(Tensor::filled({k, 1}, 1.0)));
}

Var repeat_cols(Var column, std::size_t k) {
  if (column.value().cols() != 1) throw ShapeError("repeat_cols expects a column");
  return matmul(column, column.tape().constant(Tensor::filled({1, k}, 1.0)));
}

namespace {

/// Contributions of node `self` (with output gradient g) to its two parents.
std::pair<Var, Var> local_gradients(Tape& tape, std::size_t self, Var g) {
  const Node& n = tape.node(self);
  Var out(&tape, self);
  Var a = n.lhs != kNoParent ? Var(&tape, n.lhs) : Var();
  Var b = n.rhs != kNoParent ? Var(&tape, n.rhs) : Var();
  switch (n.kernel) {
    case Kernel::Leaf: return {};
    case Kernel::Add: return {unbroadcast(g, a.shape()), unbroadcast(g, b.shape())};
    case Kernel::Sub: return {unbroadcast(g, a.shape()), unbroadcast(neg(g), b.shape())};
    case Kernel::Mul: return {unbroadcast(mul(g, b), a.shape()), unbroadcast(mul(g, a), b.shape())};
    case Kernel::Div:
      return {unbroadcast(div(g, b), a.shape()), unbroadcast(neg(div(mul(g, out), b)), b.shape())};
    case Kernel::Neg: return {neg(g), {}};
    case Kernel::ScalarMul: return {scalar_mul(n.factor, g), {}};
    case Kernel::MatMul: return {matmul(g, transpose(b)), matmul(transpose(a), g)};
    case Kernel::Transpose: return {transpose(g), {}};
    case Kernel::Sum: return {broadcast(g, a.shape()), {}};
    case Kernel::Mean:
      return {scalar_mul(1.0 / static_cast<double>(a.value().numel()), broadcast(g, a.shape())), {}};
    case Kernel::Broadcast: return {reshape(sum(g), a.shape()), {}};
    case Kernel::Reshape: return {reshape(g, a.shape()), {}};
    case Kernel::Square: return {scalar_mul(2.0, mul(g, a)), {}};
    case Kernel::Sqrt: return {div(g, scalar_mul(2.0, out)), {}};
    case Kernel::AbsSmooth:
      return {mul(g, div(a, add(out, tape.scalar(std::sqrt(kernels::kAbsSmoothEps))))), {}};
    case Kernel::Exp: return {mul(g, out), {}};
    case Kernel::Log: return {div(g, a), {}};
    case Kernel::Tanh: return {mul(g, sub(tape.scalar(1.0), square(out))), {}};
    case Kernel::Sigmoid: return {mul(g, mul(out, sub(tape.scalar(1.0), out))), {}};
    case Kernel::Softplus: return {mul(g, sigmoid(a)), {}};
  }
  return {};
}

}  // namespace

std::vector<Var> gradient(Var root, std::span<const Var> wrt, bool higher_order) {
  if (root.value().numel() != 1) {
    throw std::invalid_argument("gradient: root must be a scalar, got shape " + shape_to_string(root.shape()));
  }
  Tape& tape = root.tape();
  const std::size_t last = root.id();
  std::vector<char> reach(last + 1, 0);
  for (const Var& w : wrt) {
    if (&w.tape() != &tape) throw std::invalid_argument("gradient: wrt node lives on another tape");
    if (!w.requires_grad()) throw std::invalid_argument("gradient: wrt node does not require grad");
    if (w.id() <= last) reach[w.id()] = 1;
  }
  for (std::size_t i = 0; i <= last; ++i) {
    if (reach[i]) continue;
    const Node& n = tape.node(i);
    if (!n.requires_grad) continue;
    reach[i] = (n.lhs != kNoParent && reach[n.lhs]) || (n.rhs != kNoParent && reach[n.rhs]);
  }

  std::vector<Var> grads(last + 1);
  if (reach[last]) grads[last] = tape.constant(Tensor::filled(root.shape(), 1.0));
  for (std::size_t i = last + 1; i-- > 0;) {
    if (!reach[i] || !grads[i].valid()) continue;
    const Node& n = tape.node(i);
    if (n.kernel == Kernel::Leaf) continue;
    const std::size_t lhs = n.lhs;
    const std::size_t rhs = n.rhs;
    const bool want_lhs = lhs != kNoParent && reach[lhs];
    const bool want_rhs = rhs != kNoParent && reach[rhs];
    if (!want_lhs && !want_rhs) continue;
    auto [ga, gb] = local_gradients(tape, i, grads[i]);
    if (want_lhs) grads[lhs] = grads[lhs].valid() ? add(grads[lhs], ga) : ga;
    if (want_rhs) grads[rhs] = grads[rhs].valid() ? add(grads[rhs], gb) : gb;
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() > last || !grads[w.id()].valid()) {
      result.push_back(tape.constant(Tensor::zeros(w.shape())));
    } else if (higher_order) {
      result.push_back(grads[w.id()]);
    } else {
      result.push_back(tape.constant(grads[w.id()].value()));
    }
  }
  return result;
}

double finite_difference_check(const ScalarFunction& f, const Tensor& point, double step, double eps) {
  if (!(step > 0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.leaf(point, true);
    analytic = gradient(f(tape, x), x, false).value();
  }
  auto eval = [&](const Tensor& p) {
    Tape tape;
    return f(tape, tape.leaf(p, true)).item();
  };
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    const double x0 = point[i];
    probe[i] = x0 + step;
    const double up = eval(probe);
    probe[i] = x0 - step;
    const double down = eval(probe);
    probe[i] = x0;
    const double central = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + eps);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace srdml::ad

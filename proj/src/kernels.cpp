#include "srdml/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace srdml::kernels {

namespace {

constexpr std::size_t kSumChunk = 4096;

bool go_parallel(std::size_t work) { return work >= kParallelThreshold && !omp_in_parallel(); }

inline double apply_binary(BinaryOp op, double a, double b) noexcept {
  switch (op) {
    case BinaryOp::Add: return a + b;
    case BinaryOp::Sub: return a - b;
    case BinaryOp::Mul: return a * b;
    case BinaryOp::Div: return a / b;
  }
  return 0.0;
}

inline void matmul_row(std::span<const double> a, std::span<const double> b, std::span<double> c,
                       std::size_t i, std::size_t k, std::size_t n) {
  double* crow = c.data() + i * n;
  std::fill(crow, crow + n, 0.0);
  const double* arow = a.data() + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

}  // namespace

double apply_unary(UnaryOp op, double x) noexcept {
  switch (op) {
    case UnaryOp::Neg: return -x;
    case UnaryOp::Square: return x * x;
    case UnaryOp::Sqrt: return std::sqrt(x);
    case UnaryOp::AbsSmooth: return std::sqrt(x * x + kAbsSmoothEps) - std::sqrt(kAbsSmoothEps);
    case UnaryOp::Exp: return std::exp(x);
    case UnaryOp::Log: return std::log(x);
    case UnaryOp::Tanh: return std::tanh(x);
    case UnaryOp::Sigmoid:
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      else {
        const double e = std::exp(x);
        return e / (1.0 + e);
      }
    case UnaryOp::Softplus: return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }
  return 0.0;
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (go_parallel(m * k * n))
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_row(a, b, c, static_cast<std::size_t>(i), k, n);
}

void transpose(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols) {
  const auto r = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (go_parallel(rows * cols))
  for (std::ptrdiff_t i = 0; i < r; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + ui] = in[ui * cols + j];
  }
}

void unary(UnaryOp op, std::span<const double> in, std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for schedule(static) if (go_parallel(in.size()))
  for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = apply_unary(op, in[static_cast<std::size_t>(i)]);
}

void binary(BinaryOp op, std::span<const double> a, std::span<const double> b, std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(out.size());
  const bool sa = a.size() == 1;
  const bool sb = b.size() == 1;
#pragma omp parallel for schedule(static) if (go_parallel(out.size()))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    out[u] = apply_binary(op, sa ? a[0] : a[u], sb ? b[0] : b[u]);
  }
}

void scale(double factor, std::span<const double> in, std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for schedule(static) if (go_parallel(in.size()))
  for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = factor * in[static_cast<std::size_t>(i)];
}

double sum(std::span<const double> in) {
  const std::size_t chunks = (in.size() + kSumChunk - 1) / kSumChunk;
  if (chunks <= 1) return reference::sum(in);
  std::vector<double> partial(chunks, 0.0);
  const auto nc = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(static) if (go_parallel(in.size()))
  for (std::ptrdiff_t c = 0; c < nc; ++c) {
    const auto begin = static_cast<std::size_t>(c) * kSumChunk;
    const auto end = std::min(in.size(), begin + kSumChunk);
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) acc += in[i];
    partial[static_cast<std::size_t>(c)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += a[i * k + p] * b[p * n + j];
    }
  }
}

void transpose(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
}

void unary(UnaryOp op, std::span<const double> in, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = apply_unary(op, in[i]);
}

void binary(BinaryOp op, std::span<const double> a, std::span<const double> b, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = apply_binary(op, a.size() == 1 ? a[0] : a[i], b.size() == 1 ? b[0] : b[i]);
}

void scale(double factor, std::span<const double> in, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = factor * in[i];
}

double sum(std::span<const double> in) {
  double acc = 0.0;
  for (double v : in) acc += v;
  return acc;
}

}  // namespace reference

}  // namespace srdml::kernels

#pragma once

// Dense numeric kernels behind the autodiff tape.
//
// Two implementations share one interface: `srdml::kernels` splits the outer
// loop across OpenMP threads once the work is large enough, and
// `srdml::kernels::reference` is the plain serial loop nest kept as the test
// oracle. Every output element is produced by exactly one thread with the same
// accumulation order as the reference, so matmul and the elementwise kernels
// are bit-identical between the two. `sum` uses a fixed chunking that does not
// depend on the thread count, so it is deterministic but may differ from the
// naive reference in the last bits.

#include <cstddef>
#include <span>

namespace srdml::kernels {

enum class UnaryOp { Neg, Square, Sqrt, AbsSmooth, Exp, Log, Tanh, Sigmoid, Softplus };
enum class BinaryOp { Add, Sub, Mul, Div };

/// Smoothing constant of AbsSmooth: |x| ~ sqrt(x^2 + eps) - sqrt(eps).
inline constexpr double kAbsSmoothEps = 1e-12;

/// Element count above which the OpenMP path is taken.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 14;

double apply_unary(UnaryOp op, double x) noexcept;

/// c[m,n] = a[m,k] * b[k,n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
/// out[cols,rows] = in[rows,cols]^T
void transpose(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols);
void unary(UnaryOp op, std::span<const double> in, std::span<double> out);
/// Elementwise op; an operand of length 1 is broadcast against the other.
void binary(BinaryOp op, std::span<const double> a, std::span<const double> b, std::span<double> out);
void scale(double factor, std::span<const double> in, std::span<double> out);
double sum(std::span<const double> in);

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
void transpose(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t cols);
void unary(UnaryOp op, std::span<const double> in, std::span<double> out);
void binary(BinaryOp op, std::span<const double> a, std::span<const double> b, std::span<double> out);
void scale(double factor, std::span<const double> in, std::span<double> out);
double sum(std::span<const double> in);

}  // namespace reference

}  // namespace srdml::kernels

// Times the OpenMP kernels against the serial reference loops.
//
//   srdml_bench [repetitions]
//
// Thread count follows OMP_NUM_THREADS.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "srdml/kernels.hpp"
#include "srdml/rng.hpp"

namespace k = srdml::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  srdml::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

/// Best of `reps` wall-clock timings, in milliseconds.
double best_ms(int reps, const std::function<void()>& body) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void row(const std::string& name, int reps, const std::function<void()>& serial, const std::function<void()>& parallel) {
  const double s = best_ms(reps, serial), p = best_ms(reps, parallel);
  std::printf("%-28s %10.3f %10.3f %8.2fx\n", name.c_str(), s, p, s / p);
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
  std::printf("threads %d, best of %d\n", omp_get_max_threads(), reps);
  std::printf("%-28s %10s %10s %9s\n", "kernel", "serial ms", "openmp ms", "speedup");

  double sink = 0.0;
  for (std::size_t n : {128u, 256u, 512u}) {
    const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
    std::vector<double> c(n * n);
    row("matmul " + std::to_string(n), reps, [&] { k::reference::matmul(a, b, c, n, n, n); },
        [&] { k::matmul(a, b, c, n, n, n); });
    row("transpose " + std::to_string(n), reps, [&] { k::reference::transpose(a, c, n, n); },
        [&] { k::transpose(a, c, n, n); });
    sink += c[0];
  }
  for (std::size_t n : {std::size_t{1} << 16, std::size_t{1} << 20, std::size_t{1} << 22}) {
    const auto a = random_vector(n, 3), b = random_vector(n, 4);
    std::vector<double> out(n);
    const std::string size = std::to_string(n);
    row("tanh " + size, reps, [&] { k::reference::unary(k::UnaryOp::Tanh, a, out); },
        [&] { k::unary(k::UnaryOp::Tanh, a, out); });
    row("softplus " + size, reps, [&] { k::reference::unary(k::UnaryOp::Softplus, a, out); },
        [&] { k::unary(k::UnaryOp::Softplus, a, out); });
    row("mul " + size, reps, [&] { k::reference::binary(k::BinaryOp::Mul, a, b, out); },
        [&] { k::binary(k::BinaryOp::Mul, a, b, out); });
    row("sum " + size, reps, [&] { sink += k::reference::sum(a); }, [&] { sink += k::sum(a); });
    sink += out[0];
  }
  // Keeps the optimizer from discarding the work.
  if (sink == 12345.678) std::printf("%g\n", sink);
  return 0;
}

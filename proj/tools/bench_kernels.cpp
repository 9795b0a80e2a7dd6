// Times the serial reference kernels against the OpenMP ones at the matrix
// shapes the transformers actually hit, plus a few square sizes.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "tap/kernels.hpp"
#include "tap/rng.hpp"

namespace {

struct Shape {
  int m, k, n;
};

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
  int threads = tap::kernels::num_threads();
  if (argc > 1) threads = std::stoi(argv[1]);
  tap::kernels::set_num_threads(threads);

  const std::vector<Shape> shapes = {
      {24, 128, 128}, {24, 128, 512}, {24, 512, 128},
      {128, 128, 128}, {256, 256, 256}, {512, 512, 512},
  };

  std::printf("kernel,m,k,n,threads,serial_ms,parallel_ms,speedup\n");
  tap::Rng rng(1);
  for (const Shape& s : shapes) {
    std::vector<float> a(static_cast<std::size_t>(s.m) * s.k);
    std::vector<float> b(static_cast<std::size_t>(s.k) * s.n);
    std::vector<float> c(static_cast<std::size_t>(s.m) * s.n);
    for (auto& v : a) v = rng.normal_float();
    for (auto& v : b) v = rng.normal_float();
    const int reps = s.m * s.k * s.n > (1 << 24) ? 3 : 20;
    const double serial = time_ms(
        [&] {
          tap::kernels::matmul_nn_serial(a.data(), b.data(), c.data(), s.m, s.k,
                                         s.n, false);
        },
        reps);
#ifdef _OPENMP
    const double parallel = time_ms(
        [&] {
          tap::kernels::matmul_nn_parallel(a.data(), b.data(), c.data(), s.m,
                                           s.k, s.n, false);
        },
        reps);
#else
    const double parallel = serial;
#endif
    std::printf("matmul_nn,%d,%d,%d,%d,%.4f,%.4f,%.2f\n", s.m, s.k, s.n, threads,
                serial, parallel, serial / parallel);
  }
  return 0;
}

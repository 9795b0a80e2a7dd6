#pragma once

// Test-only reference implementations, independent of the library's tape and
// kernels. Everything here computes in double.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace oracles {

inline std::vector<double> matmul_ref(const std::vector<double>& a,
                                      const std::vector<double>& b, int m, int k,
                                      int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < k; ++l)
        c[static_cast<std::size_t>(i) * n + j] +=
            a[static_cast<std::size_t>(i) * k + l] *
            b[static_cast<std::size_t>(l) * n + j];
  return c;
}

inline std::vector<double> maxpool1d_ref(const std::vector<double>& x, int t,
                                         int f, int l) {
  const int m = t / l;
  std::vector<double> out(static_cast<std::size_t>(m) * f);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < f; ++j) {
      double best = x[static_cast<std::size_t>(i * l) * f + j];
      for (int r = 1; r < l; ++r)
        best = std::max(best, x[static_cast<std::size_t>(i * l + r) * f + j]);
      out[static_cast<std::size_t>(i) * f + j] = best;
    }
  return out;
}

inline double softmax_cross_entropy_ref(const std::vector<double>& logits, int n,
                                        int k, const std::vector<int>& targets) {
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = logits.data() + static_cast<std::size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) - (row[targets[static_cast<std::size_t>(i)]] - mx);
  }
  return total / n;
}

// Central finite differences of a scalar double function, step h.
inline std::vector<double> finite_diff(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-3) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace oracles

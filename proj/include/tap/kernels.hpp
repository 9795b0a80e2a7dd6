#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tap::kernels {

// Runtime switch for the OpenMP paths. The serial implementations are the
// reference; the parallel ones partition output rows, keep each row's
// accumulation order unchanged, and therefore produce bit-identical results.
bool parallel_enabled();
void set_parallel_enabled(bool enabled);
void set_num_threads(int n);
int num_threads();

// Work (in multiply-adds) below which the parallel path is not attempted.
inline constexpr std::int64_t kParallelWorkThreshold = 16 * 1024;

inline bool in_parallel_region() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

// C[m x n] (+)= A[m x k] * B[k x n]
template <typename T>
void matmul_nn_serial(const T* a, const T* b, T* c, int m, int k, int n,
                      bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::int64_t>(i) * n;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    const T* arow = a + static_cast<std::int64_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const T av = arow[l];
      const T* brow = b + static_cast<std::int64_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] (+)= A[m x k] * B^T, with B stored row-major as [n x k]
template <typename T>
void matmul_nt_serial(const T* a, const T* b, T* c, int m, int k, int n,
                      bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::int64_t>(i) * k;
    T* crow = c + static_cast<std::int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::int64_t>(j) * k;
      T acc = T(0);
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

// C[m x n] (+)= A^T * B, with A stored row-major as [k x m]
template <typename T>
void matmul_tn_serial(const T* a, const T* b, T* c, int m, int k, int n,
                      bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::int64_t>(i) * n;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int l = 0; l < k; ++l) {
      const T av = a[static_cast<std::int64_t>(l) * m + i];
      const T* brow = b + static_cast<std::int64_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

#ifdef _OPENMP
template <typename T>
void matmul_nn_parallel(const T* a, const T* b, T* c, int m, int k, int n,
                        bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    matmul_nn_serial(a + static_cast<std::int64_t>(i) * k, b,
                     c + static_cast<std::int64_t>(i) * n, 1, k, n, accumulate);
  }
}

template <typename T>
void matmul_nt_parallel(const T* a, const T* b, T* c, int m, int k, int n,
                        bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    matmul_nt_serial(a + static_cast<std::int64_t>(i) * k, b,
                     c + static_cast<std::int64_t>(i) * n, 1, k, n, accumulate);
  }
}

template <typename T>
void matmul_tn_parallel(const T* a, const T* b, T* c, int m, int k, int n,
                        bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::int64_t>(i) * n;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int l = 0; l < k; ++l) {
      const T av = a[static_cast<std::int64_t>(l) * m + i];
      const T* brow = b + static_cast<std::int64_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}
#endif  // _OPENMP

template <typename T>
inline bool use_parallel(int m, int k, int n) {
#ifdef _OPENMP
  return parallel_enabled() && !in_parallel_region() && m > 1 &&
         static_cast<std::int64_t>(m) * k * n >= kParallelWorkThreshold;
#else
  (void)m;
  (void)k;
  (void)n;
  return false;
#endif
}

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate) {
#ifdef _OPENMP
  if (use_parallel<T>(m, k, n)) {
    matmul_nn_parallel(a, b, c, m, k, n, accumulate);
    return;
  }
#endif
  matmul_nn_serial(a, b, c, m, k, n, accumulate);
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate) {
#ifdef _OPENMP
  if (use_parallel<T>(m, k, n)) {
    matmul_nt_parallel(a, b, c, m, k, n, accumulate);
    return;
  }
#endif
  matmul_nt_serial(a, b, c, m, k, n, accumulate);
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate) {
#ifdef _OPENMP
  if (use_parallel<T>(m, k, n)) {
    matmul_tn_parallel(a, b, c, m, k, n, accumulate);
    return;
  }
#endif
  matmul_tn_serial(a, b, c, m, k, n, accumulate);
}

}  // namespace tap::kernels

#include "tap/kernels.hpp"

namespace tap::kernels {

namespace {
bool g_parallel_enabled = true;
}

bool parallel_enabled() { return g_parallel_enabled; }

void set_parallel_enabled(bool enabled) { g_parallel_enabled = enabled; }

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace tap::kernels

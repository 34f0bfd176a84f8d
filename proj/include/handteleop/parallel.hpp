#pragma once

// Thin OpenMP shim. Everything else includes this instead of <omp.h> so the
// library still builds (serially) when OpenMP is disabled.

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace handteleop {

inline int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#if defined(_OPENMP)
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace handteleop

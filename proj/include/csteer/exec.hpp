#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace csteer {

// Every parallel kernel in this project has a serial reference path selected
// by ExecPolicy. Outputs are indexed, never accumulated across iterations, so
// the two paths produce bit-identical results; tests assert this and the
// bench tool compares their throughput.
enum class ExecPolicy { serial, parallel };

template <typename Fn>
void parallel_for(std::size_t n, ExecPolicy policy, Fn&& fn) {
  if (policy == ExecPolicy::parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      fn(static_cast<std::size_t>(i));
    }
    return;
#endif
  }
  for (std::size_t i = 0; i < n; ++i) {
    fn(i);
  }
}

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace csteer

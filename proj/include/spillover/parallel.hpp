#pragma once

#include <cstdint>
#include <functional>

#include <omp.h>

namespace spillover {

// All hot loops in this project are data-parallel over an index range, with
// per-index RNG substreams. Work is written into per-index slots and reduced
// serially afterwards, so the floating-point result is identical for any
// thread count. threads == 1 is the serial reference path used by tests and
// the benchmark target; threads == 0 means "use the OpenMP default".
template <typename Fn>
void parallel_for(std::int64_t n, int threads, Fn&& fn) {
  if (threads == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (threads > 1) {
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (std::int64_t i = 0; i < n; ++i) fn(i);
  } else {
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < n; ++i) fn(i);
  }
}

inline int hardware_threads() { return omp_get_max_threads(); }

}  // namespace spillover

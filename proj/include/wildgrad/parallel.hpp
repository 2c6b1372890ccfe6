#pragma once

#include <cstdint>
#include <cstdlib>
#include <vector>

#ifdef WILDGRAD_HAVE_OPENMP
#include <omp.h>
#endif

namespace wildgrad {

// Deterministic parallelism: work is split into fixed chunks, each chunk is
// computed independently (own RNG stream), and partial results are reduced
// serially in chunk order. Results are therefore bit-identical for any
// worker count, including 1.

inline constexpr int64_t chunk_items = 4096;

/// Worker cap: WILDGRAD_THREADS env var if set (>= 1), else the OpenMP
/// default, else 1.
inline int worker_count() {
  if (const char* e = std::getenv("WILDGRAD_THREADS")) {
    int v = std::atoi(e);
    if (v >= 1) return v;
  }
#ifdef WILDGRAD_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

/// Evaluate fn(c) for c in [0, nchunks) and return the results in chunk
/// order. fn must be pure. The caller reduces the vector serially.
template <class R, class Fn>
std::vector<R> map_chunks(int64_t nchunks, Fn&& fn) {
  std::vector<R> out((size_t)nchunks);
#ifdef WILDGRAD_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(worker_count())
  for (int64_t c = 0; c < nchunks; ++c) out[(size_t)c] = fn(c);
#else
  for (int64_t c = 0; c < nchunks; ++c) out[(size_t)c] = fn(c);
#endif
  return out;
}

/// Serial reference of map_chunks, kept for benchmarking and as the
/// equivalence oracle in tests.
template <class R, class Fn>
std::vector<R> map_chunks_serial(int64_t nchunks, Fn&& fn) {
  std::vector<R> out((size_t)nchunks);
  for (int64_t c = 0; c < nchunks; ++c) out[(size_t)c] = fn(c);
  return out;
}

}  // namespace wildgrad

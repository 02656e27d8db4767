#pragma once
// OpenMP helpers. Every parallel kernel in the engine computes per-index
// results into preallocated slots and reduces them serially in index
// order, so parallel output is bit-identical to the serial reference.

#include <omp.h>

namespace strmac {

// 0 means "use all available".
inline int resolve_threads(int requested) {
    return requested > 0 ? requested : omp_get_max_threads();
}

// Runs f(i) for i in [0, n) across `threads` OpenMP threads. f must write
// only to its own index's slot.
template <typename F>
void for_each_index(int n, int threads, F&& f) {
#pragma omp parallel for schedule(dynamic, 1) num_threads(resolve_threads(threads))
    for (int i = 0; i < n; ++i) f(i);
}

} // namespace strmac

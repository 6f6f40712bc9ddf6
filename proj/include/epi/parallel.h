#pragma once

#include <cstddef>
#include <functional>

namespace epi {

// Worker count from EPI_THREADS. 0 (or 1) means deterministic single-threaded
// mode; unset means hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, n). Work is split statically, so as long as fn(i)
// writes only to slot i the result is independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  int workers = -1);

}  // namespace epi

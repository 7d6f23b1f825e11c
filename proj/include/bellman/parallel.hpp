#pragma once

#include <functional>

namespace bellman {

/// Worker-thread count: BELLMAN_CALIB_THREADS if set (>=1), else hardware
/// concurrency.
int max_threads();

/// Runs fn(i) for i in [0, count) across worker threads. Callers own
/// determinism by writing results indexed by i.
void parallel_for(int count, const std::function<void(int)>& fn);

}  // namespace bellman

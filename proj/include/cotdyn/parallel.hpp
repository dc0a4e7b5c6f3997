#pragma once

#include <cstddef>
#include <functional>

namespace cotdyn {

/// Worker count: COT_DYNAMICS_THREADS when set and positive, otherwise the
/// hardware concurrency (at least 1).
std::size_t default_thread_count();

/// Runs body(i) for i in [0, n) on up to `threads` workers (0 = default).
/// Indices are statically partitioned into contiguous blocks; body must only
/// write to per-index state, so results do not depend on the worker count.
/// The exception from the lowest failing index is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t threads = 0);

}  // namespace cotdyn

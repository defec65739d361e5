#pragma once

#include <cstddef>
#include <functional>

namespace longctx {

// Worker cap: LONGCTX_THREADS if set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t max_threads();

// Runs body(i) for i in [0, n). Each index is processed exactly once; callers
// write results into per-index slots so output never depends on scheduling.
// The first exception thrown by any body is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace longctx

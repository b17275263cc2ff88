#pragma once

#include <cstddef>
#include <functional>

namespace clipforge {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Callers index into
// preallocated result slots, so aggregation order never depends on completion
// order. The first exception thrown by any worker is rethrown after join.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace clipforge

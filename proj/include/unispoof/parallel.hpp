#pragma once

#include <cstddef>
#include <functional>

namespace unispoof {

// Worker cap from UNISPOOF_THREADS (0 or 1 = run inline); unset means the
// hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Each index writes only its own output slot, so
// results do not depend on the schedule. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace unispoof

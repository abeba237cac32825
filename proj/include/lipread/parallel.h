#pragma once

#include <cstddef>
#include <functional>

namespace lipread {

// Runs body(i) for i in [0, n) on up to `jobs` threads. Work is assigned by
// index, so results written to per-index slots do not depend on scheduling.
// The first exception thrown by any body is rethrown on the caller's thread.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body);

}  // namespace lipread

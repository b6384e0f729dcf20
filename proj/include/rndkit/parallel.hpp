#pragma once

#include <cstddef>
#include <functional>

namespace rndkit {

/// Worker count: RND_THREADS if set (>= 1), otherwise hardware concurrency.
std::size_t thread_budget();

/// Runs body(i) for i in [0, n) on up to thread_budget() threads. Work is
/// handed out dynamically; results must be written to per-index slots so the
/// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace rndkit

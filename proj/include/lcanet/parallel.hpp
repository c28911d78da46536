#pragma once

#include <cstddef>
#include <functional>

namespace lcanet {

/// Worker count used by parallel_for. 0 requests hardware concurrency.
void set_worker_threads(std::size_t n);
std::size_t worker_threads();

/// Runs fn(i) for i in [0, n). Work items must be independent; results must
/// not depend on the thread count (callers do any order-sensitive reduction
/// themselves, in index order). The first exception thrown by a worker is
/// rethrown on the calling thread after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lcanet

#pragma once

#include <cstddef>
#include <functional>

namespace cpfc {

/// Worker count: ADN_CPFC_THREADS if set and positive, else the hardware
/// concurrency (at least 1).
std::size_t default_thread_count();

/// Run fn(i) for i in [0, n) on up to `threads` workers (0 = default).
/// Work is handed out dynamically; callers write results into slot i so
/// the outcome does not depend on scheduling. If calls throw, the exception
/// of the lowest index is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t threads = 0);

}  // namespace cpfc

#pragma once

#include <cstddef>
#include <functional>

namespace fddlab::num {

/// Worker cap: FDDLAB_THREADS if set, else hardware concurrency.
int worker_threads();

/// Runs fn(i) for i in [0, n) across worker_threads() threads. fn must only
/// touch state owned by item i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace fddlab::num

#pragma once

#include <cstddef>
#include <functional>

namespace reconkit {

/// `requested` if positive, else RECONKIT_THREADS if set and positive, else 1.
std::size_t resolve_threads(std::size_t requested = 0);

/// Runs fn(i) for i in [0, n) on up to `threads` threads. The first exception
/// thrown by any task is rethrown after all threads finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace reconkit

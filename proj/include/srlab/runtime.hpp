#pragma once

#include <cstddef>
#include <functional>

namespace srlab {

/// requested > 0 wins; otherwise SRLAB_THREADS, otherwise the hardware count.
int resolve_thread_count(int requested = 0);

/// Caps internal parallelism and tunes the allocator for large, short-lived
/// activation buffers. Call once at startup.
void configure_runtime(int threads);

int thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Each index is
/// visited exactly once; the first exception is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace srlab

#pragma once

#include <cstdint>
#include <functional>

namespace meshvox {

// Global worker-thread cap shared by all kernels (CLI --threads).
int thread_count();
void set_thread_count(int n);

// Runs f(i) for i in [0, n). Work is split into contiguous chunks, one per
// worker. Each index is processed by exactly one thread, so kernels that
// write disjoint outputs per index stay deterministic for any worker count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& f);

}  // namespace meshvox

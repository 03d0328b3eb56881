#pragma once

#include <functional>

namespace thermoflux {

// Global worker count for pixel-parallel loops. 0 selects the hardware
// concurrency. Results never depend on the setting: parallel loops write
// disjoint ranges and every floating-point reduction runs sequentially.
void set_thread_count(int n);
int thread_count();

// Runs fn(begin_i, end_i) over contiguous chunks of [begin, end).
// Chunks are disjoint; fn must not touch data owned by other chunks.
void parallel_chunks(int begin, int end, const std::function<void(int, int)>& fn);

}  // namespace thermoflux

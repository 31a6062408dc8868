#pragma once

#include <cstddef>
#include <functional>

namespace anatomy {

// Worker count from ANATOMY_THREADS, falling back to hardware concurrency.
std::size_t thread_count();

// Splits [0, n) into contiguous chunks, one per worker, and runs
// body(begin, end, chunk_index) on each. Chunk boundaries depend only on n and
// the worker count, so callers that combine per-chunk results in chunk order
// stay deterministic.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& body,
                  std::size_t workers = 0);

}  // namespace anatomy

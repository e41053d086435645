#pragma once

#include <cstddef>
#include <functional>

namespace flood {

/// Worker count used by data-parallel loops. 0 selects hardware concurrency.
void set_thread_count(unsigned n);
unsigned thread_count();

/// Splits [begin, end) into contiguous chunks, one per worker. Each index is
/// visited exactly once, so results are independent of the worker count as
/// long as `body` writes only to index-owned outputs.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 1);

}  // namespace flood

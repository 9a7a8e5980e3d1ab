// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace log3d {

/// Process-wide worker count used by the parallel stages. 0 means "all cores".
void set_thread_count(int threads);
int thread_count();

/// Runs fn(begin, end) over fixed-size chunks of [0, count). Chunk boundaries
/// depend only on `count` and `chunk`, never on the worker count, so any
/// per-chunk partial result merged in chunk order is thread-count independent.
void parallel_for_chunks(std::size_t count, std::size_t chunk,
                         const std::function<void(std::size_t, std::size_t)>& fn);

inline std::size_t chunk_count(std::size_t count, std::size_t chunk) {
  return (count + chunk - 1) / chunk;
}

}  // namespace log3d

#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace nlrn {

/// Splits [begin,end) into one contiguous chunk per worker. fn(chunk_begin,
/// chunk_end, worker_index) runs concurrently; chunk boundaries depend only on
/// the worker count, never on scheduling.
inline void parallel_chunks(int begin, int end, int workers,
                            const std::function<void(int, int, int)>& fn) {
  const int total = end - begin;
  if (total <= 0) return;
  if (workers < 1) workers = 1;
  if (workers > total) workers = total;
  if (workers == 1) {
    fn(begin, end, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const int base = total / workers, extra = total % workers;
  int cursor = begin;
  for (int t = 0; t < workers; ++t) {
    const int len = base + (t < extra ? 1 : 0);
    pool.emplace_back(fn, cursor, cursor + len, t);
    cursor += len;
  }
  for (auto& th : pool) th.join();
}

}  // namespace nlrn

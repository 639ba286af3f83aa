#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace coagent {

/// Runs fn(chunk_index) for chunk_index in [0, n_chunks) across workers.
/// Chunks are claimed from an atomic counter; each chunk writes only its own
/// slot, so results combined later in chunk order are identical for any
/// worker count.
inline void parallel_chunks(long n_chunks, int workers, const std::function<void(long)>& fn) {
  if (workers <= 1 || n_chunks <= 1) {
    for (long c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::atomic<long> next{0};
  auto body = [&] {
    for (;;) {
      const long c = next.fetch_add(1);
      if (c >= n_chunks) break;
      fn(c);
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min<long>(workers, n_chunks);
  pool.reserve(n);
  for (int w = 0; w < n; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
}

inline int default_workers() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace coagent

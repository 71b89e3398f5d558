#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace efs {

// Worker count for parallel pipeline stages. Bounded by the
// EFS_DEPTH_THREADS environment variable; defaults to the hardware
// concurrency.
inline int thread_count() {
  if (const char* env = std::getenv("EFS_DEPTH_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(begin, end) over disjoint chunks of [0, n). Each chunk writes its
// own output range, so results are identical regardless of the worker count.
inline void parallel_chunks(int n, const std::function<void(int, int)>& fn) {
  const int workers = std::min(thread_count(), n);
  if (workers <= 1 || n <= 1) {
    if (n > 0) fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(fn, begin, end);
  }
  for (auto& t : pool) t.join();
}

}  // namespace efs

#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace lplab {

// Worker parallelism is capped by LPL_LAB_THREADS (0 or 1 = single-threaded).
// All parallel loops in the project shard work by fixed chunks and reduce in
// chunk order, so results are bit-identical for any thread count.
inline int max_threads() {
  if (const char* env = std::getenv("LPL_LAB_THREADS")) {
    int v = std::atoi(env);
    if (v <= 0) return 1;
    return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs fn(i) for i in [0, n). Blocks until done.
inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  int nthreads = std::min<int64_t>(max_threads(), n);
  if (nthreads <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::vector<std::thread> workers;
  workers.reserve(static_cast<size_t>(nthreads));
  for (int t = 0; t < nthreads; ++t) {
    workers.emplace_back([&] {
      for (;;) {
        int64_t i = next.fetch_add(1);
        if (i >= n) break;
        fn(i);
      }
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace lplab

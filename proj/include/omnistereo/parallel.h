#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace omni {

// Worker count: OSC_THREADS when set and positive, else the hardware count.
inline int NumThreads() {
  if (const char* env = std::getenv("OSC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(begin, end) over contiguous chunks of [0, n).  Chunks write to
// disjoint outputs, so results do not depend on the schedule.
template <typename Fn>
void ParallelFor(size_t n, Fn&& fn) {
  const size_t workers = std::min<size_t>(NumThreads(), n);
  if (workers <= 1) {
    if (n > 0) fn(size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const size_t chunk = (n + workers - 1) / workers;
  for (size_t w = 0; w < workers; ++w) {
    const size_t begin = w * chunk;
    const size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace omni

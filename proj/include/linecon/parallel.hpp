#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace linecon {

// Worker cap from LINECON_THREADS (unset or invalid: all cores).
inline std::size_t worker_threads() {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LINECON_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return hw;
}

// Runs body(i) for i in [0, n). Each index is handled by exactly one thread
// and bodies must only write state owned by their index, so results do not
// depend on the thread count.
template <class Body>
void parallel_for(std::size_t n, std::size_t work_per_index, Body&& body) {
  constexpr std::size_t kMinWorkPerThread = 1 << 16;
  std::size_t threads = std::min(worker_threads(), n);
  if (threads > 1) threads = std::min(threads, std::max<std::size_t>(1, n * work_per_index / kMinWorkPerThread));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
}

}  // namespace linecon

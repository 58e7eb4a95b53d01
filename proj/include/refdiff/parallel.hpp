#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace refdiff {

/// threads <= 0: REFDIFF_THREADS if set, else the hardware count.
inline int resolve_threads(int threads) {
  if (threads > 0) return threads;
  if (const char* env = std::getenv("REFDIFF_THREADS")) {
    int t = std::atoi(env);
    if (t > 0) return t;
  }
  unsigned h = std::thread::hardware_concurrency();
  return h == 0 ? 1 : static_cast<int>(h);
}

/// Runs body(i) for i in [0, n) over contiguous chunks. Results must be written to
/// per-index slots so the caller can reduce in index order.
template <class F>
void parallel_for(std::size_t n, int threads, F&& body) {
  int t = std::min<std::size_t>(resolve_threads(threads), std::max<std::size_t>(n, 1));
  if (t <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  std::size_t chunk = (n + t - 1) / t;
  for (int k = 0; k < t; ++k) {
    std::size_t a = k * chunk, b = std::min(n, a + chunk);
    if (a >= b) break;
    pool.emplace_back([&, a, b] {
      try {
        for (std::size_t i = a; i < b; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace refdiff

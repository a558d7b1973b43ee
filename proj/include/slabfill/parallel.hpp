#ifndef SLABFILL_PARALLEL_HPP
#define SLABFILL_PARALLEL_HPP

#include <algorithm>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace slabfill {

inline int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n ? static_cast<int>(n) : 1;
}

// Runs fn(i) for i in [0, n) over a fixed block partition. Every parallel
// loop in this library writes only to index-disjoint slots, so results do
// not depend on the thread count; reductions are done serially by callers.
template <typename Fn>
void parallel_for(int64_t n, int threads, Fn&& fn) {
  if (n <= 0) return;
  threads = std::clamp<int64_t>(threads, 1, n);
  if (threads == 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  std::exception_ptr err;
  std::mutex err_mu;
  auto run = [&](int64_t begin, int64_t end) {
    try {
      for (int64_t i = begin; i < end; ++i) fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mu);
      if (!err) err = std::current_exception();
    }
  };
  for (int t = 1; t < threads; ++t)
    pool.emplace_back(run, n * t / threads, n * (t + 1) / threads);
  run(0, n / threads);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

} // namespace slabfill

#endif

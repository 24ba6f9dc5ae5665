#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace driftlab {

// Thread count: explicit value if > 0, else DRIFTLAB_THREADS, else hardware.
inline int resolve_threads(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* s = std::getenv("DRIFTLAB_THREADS")) {
    int v = std::atoi(s);
    if (v > 0) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? int(hw) : 1;
}

// Runs f(i) for i in [0, n) and stores results by index, so any reduction
// done afterwards in index order is independent of scheduling.
template <class F>
auto parallel_map(int64_t n, int threads, F&& f) -> std::vector<decltype(f(int64_t{}))> {
  using R = decltype(f(int64_t{}));
  std::vector<R> out(size_t(std::max<int64_t>(n, 0)));
  int nt = int(std::min<int64_t>(resolve_threads(threads), std::max<int64_t>(n, 1)));
  if (nt <= 1) {
    for (int64_t i = 0; i < n; ++i) out[size_t(i)] = f(i);
    return out;
  }
  std::atomic<int64_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      int64_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        out[size_t(i)] = f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!err) err = std::current_exception();
        next = n;
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
  return out;
}

}  // namespace driftlab

#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rbhomog {

inline int default_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 4 : static_cast<int>(hw);
}

/// Runs fn(i, worker_id) for i in [0, n) on a pool of `workers` threads,
/// worker_id in [0, workers). Results must be written by index so the outcome
/// is independent of scheduling. The first exception is rethrown after all
/// workers stop.
template <typename F>
void parallel_for(int n, int workers, F&& fn) {
  if (workers <= 0) workers = default_workers();
  workers = std::max(1, std::min(workers, n));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i, 0);
    return;
  }

  std::atomic<int> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto body = [&](int worker) {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n || abort.load()) return;
      try {
        fn(i, worker);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        abort.store(true);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(body, w);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace rbhomog

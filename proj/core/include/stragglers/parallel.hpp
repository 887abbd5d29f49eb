#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace stragglers {

/// Run `job(i)` for i in [0, n_jobs) on up to `threads` workers. Jobs must
/// be independent and write only to their own result slots, so the outcome
/// does not depend on scheduling. The first exception is rethrown.
inline void parallel_runs(std::int64_t n_jobs, int threads,
                          const std::function<void(std::int64_t)>& job) {
  if (n_jobs <= 0) return;
  if (threads < 1) threads = 1;
  if (threads == 1 || n_jobs == 1) {
    for (std::int64_t i = 0; i < n_jobs; ++i) job(i);
    return;
  }

  std::atomic<std::int64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    while (true) {
      const std::int64_t i = next.fetch_add(1);
      if (i >= n_jobs) return;
      try {
        job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  const int n_threads = int(std::min<std::int64_t>(threads, n_jobs));
  pool.reserve(std::size_t(n_threads));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace stragglers

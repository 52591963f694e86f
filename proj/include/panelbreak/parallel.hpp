#pragma once

// Index-based parallel loop. Work items write to preallocated slots keyed
// by index, so results do not depend on the worker count or schedule.

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace panelbreak {

inline int resolve_workers(int workers) {
  if (workers > 0) return workers;
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

template <typename Fn>
void parallel_for(int count, int workers, Fn&& fn) {
  workers = resolve_workers(workers);
  if (count <= 0) return;
  if (workers <= 1 || count == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  int spawn = std::min(workers, count);
  pool.reserve(static_cast<std::size_t>(spawn));
  for (int w = 0; w < spawn; ++w) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace panelbreak

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace conceptlm {

/// Calls fn(i) for i in [0, n) on up to `limit` threads. The first exception
/// stops new work and is rethrown after all threads join.
template <class Fn>
void parallel_for(std::size_t n, std::size_t limit, Fn&& fn) {
  limit = std::max<std::size_t>(1, std::min(limit, n));
  if (limit <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(limit);
  for (std::size_t w = 0; w < limit; ++w) {
    workers.emplace_back([&] {
      while (!stop.load()) {
        auto i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          stop = true;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace conceptlm

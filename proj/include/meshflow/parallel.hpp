#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "meshflow/errors.hpp"

namespace meshflow {

namespace detail {
inline std::atomic<int>& thread_limit() {
  static std::atomic<int> limit{0};  // 0: not configured
  return limit;
}
}  // namespace detail

/// Parses MESHFLOW_THREADS (positive integer). Unset means 1.
inline int threads_from_env() {
  const char* v = std::getenv("MESHFLOW_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024)
    throw ValidationError(std::string("MESHFLOW_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<int>(n);
}

inline void set_max_threads(int n) { detail::thread_limit() = std::max(1, n); }

inline int max_threads() {
  const int n = detail::thread_limit();
  return n > 0 ? n : 1;
}

/// Runs fn(i) for i in [0, count). Work is split into contiguous chunks; each
/// index writes only its own outputs, so results do not depend on the thread
/// count. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::min<long>(max_threads(), static_cast<long>(count)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = count * w / workers; i < count * (w + 1) / workers; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace meshflow

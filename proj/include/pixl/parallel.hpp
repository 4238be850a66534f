#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "pixl/error.hpp"

namespace pixl {

/// Worker count: PIXL_THREADS when set, otherwise the hardware concurrency.
inline int worker_count() {
  if (const char* env = std::getenv("PIXL_THREADS"); env && *env) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    require(end && *end == '\0' && n >= 1, std::string("PIXL_THREADS must be a positive integer, got '") + env + "'");
    return int(n);
  }
  return std::max(1, int(std::thread::hardware_concurrency()));
}

/// Calls fn(i) for i in [0, n). Each index is handled exactly once, so
/// results written to slot i do not depend on the worker count. The first
/// exception thrown by any worker is rethrown on the caller.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn, int workers = worker_count()) {
  workers = int(std::min<size_t>(size_t(std::max(1, workers)), n));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto run = [&] {
    for (size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!err) err = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace pixl

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

namespace fedseries {

struct IndexedError {
  std::size_t index = 0;
  std::exception_ptr error;
};

/// Runs fn(i) for every i in [0, n) on up to `workers` threads. Returns the
/// failure with the lowest index, so the outcome does not depend on scheduling.
template <typename Fn>
std::optional<IndexedError> parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto drain = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(std::max(1u, workers), n);
  if (threads <= 1) {
    drain();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(drain);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) return IndexedError{i, errors[i]};
  }
  return std::nullopt;
}

}  // namespace fedseries

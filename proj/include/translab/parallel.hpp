#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace translab {

/// Runs fn(i) for i in [0, n). Index i always goes to worker i % workers, so
/// results written by index do not depend on scheduling. The exception
/// thrown for the smallest index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    pool.reserve(w);
    for (std::size_t t = 0; t < w; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += w) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
            return;
          }
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace translab

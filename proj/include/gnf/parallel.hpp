#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace gnf {

/// Worker count used when a caller passes 0.
inline unsigned default_workers() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

/// Splits [0, n) into `workers` contiguous chunks and runs fn(worker, begin, end)
/// on each. Chunk boundaries depend only on (n, workers); worker 0 runs on the
/// calling thread.
template <typename Fn>
void parallel_chunks(std::size_t n, unsigned workers, Fn&& fn) {
  if (workers == 0) workers = default_workers();
  workers = static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(workers, n)));
  if (workers == 1) {
    fn(0u, std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> threads;
    threads.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) {
      const std::size_t b = std::min(n, w * chunk);
      const std::size_t e = std::min(n, b + chunk);
      threads.emplace_back([&fn, &errors, w, b, e] {
        try {
          fn(w, b, e);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    try {
      fn(0u, std::size_t{0}, std::min(n, chunk));
    } catch (...) {
      errors[0] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Number of chunks parallel_chunks will actually use.
inline unsigned effective_workers(std::size_t n, unsigned workers) {
  if (workers == 0) workers = default_workers();
  return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(workers, n)));
}

}  // namespace gnf

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hbev {

// Invalid configuration or input data. CLI maps this to exit code 2.
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not match an operator's contract. CLI exit code 2.
class shape_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or unreadable file. CLI exit code 3.
class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Integer grid extents (X, Y, Z).
struct Dims3 {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t z = 0;

  std::size_t count() const { return x * y * z; }
  bool operator==(const Dims3&) const = default;
};

namespace threading {

inline std::atomic<unsigned>& thread_count_ref() {
  static std::atomic<unsigned> n{1};
  return n;
}

inline void set_threads(unsigned n) { thread_count_ref().store(n == 0 ? 1 : n); }

inline unsigned threads() { return thread_count_ref().load(); }

// set inside parallel_for workers so nested loops run serial instead of
// spawning threads per tiny inner kernel
inline thread_local bool in_parallel_region = false;

}  // namespace threading

// Runs fn(i) for i in [0, n), split into contiguous chunks across the
// configured thread count. Every index is handled by exactly one thread, so
// results never depend on how many threads run. Nested calls degrade to the
// serial loop.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t nt = std::min<std::size_t>(threading::threads(), n);
  if (nt <= 1 || threading::in_parallel_region) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> workers;
  workers.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([lo, hi, &fn] {
      threading::in_parallel_region = true;
      for (std::size_t i = lo; i < hi; ++i) fn(i);
      threading::in_parallel_region = false;
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace hbev

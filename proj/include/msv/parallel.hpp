#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace msv {

/// Thread count from MSV_THREADS (>= 1).
int env_threads();

/// Runs body(i) for i in [0, count) on a strided split. Results must be
/// written by index; the first exception (by worker) is rethrown.
template <class F>
void parallel_for(int count, int threads, const F& body) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < count; i += threads) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Order-fixed pairwise summation.
double pairwise_sum(const double* a, std::size_t n);

}  // namespace msv

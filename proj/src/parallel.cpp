#include "msv/parallel.hpp"

#include <cstdlib>

namespace msv {

int env_threads() {
  if (const char* s = std::getenv("MSV_THREADS")) {
    const int v = std::atoi(s);
    if (v >= 1) return std::min(v, 256);
  }
  return 1;
}

double pairwise_sum(const double* a, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum(a, h) + pairwise_sum(a + h, n - h);
}

}  // namespace msv

#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace impose {

// Median with the conventional midpoint rule for even counts. Takes a copy so
// callers keep their ordering.
inline double median(std::vector<double> v) {
  if (v.empty()) {
    throw std::invalid_argument("median: empty sample");
  }
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) {
    throw std::invalid_argument("mean: empty sample");
  }
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace impose

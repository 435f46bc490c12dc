#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "kblab/rng.hpp"

namespace kblab {

// Weighted sampling without replacement, probability proportional to weight,
// via exponential keys: key_i = -ln(u_i) / w_i, keep the k smallest. One
// uniform is drawn per item in index order, so the draw count is fixed by n.
// Returned indices are in ascending key order.
inline std::vector<std::size_t> sample_subset(const std::vector<double>& weights, std::size_t k,
                                              Rng& rng) {
  const std::size_t n = weights.size();
  if (k > n) {
    throw std::invalid_argument("sample_subset: k=" + std::to_string(k) + " exceeds n=" +
                                std::to_string(n));
  }
  std::vector<double> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(weights[i] > 0.0)) {
      throw std::invalid_argument("sample_subset: weights must be positive (index " +
                                  std::to_string(i) + ")");
    }
    keys[i] = -std::log(rng.uniform01_open()) / weights[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (keys[a] != keys[b]) return keys[a] < keys[b];
                      return a < b;
                    });
  order.resize(k);
  return order;
}

}  // namespace kblab

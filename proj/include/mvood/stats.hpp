#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace mvood {

/// Type-7 (linear interpolation between order statistics) quantile of an
/// already sorted sequence. `p` is a probability in [0, 1].
template <typename T>
double quantile_sorted(std::span<const T> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sequence");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile probability outside [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  const double a = static_cast<double>(sorted[lo]);
  const double b = static_cast<double>(sorted[hi]);
  return a + frac * (b - a);
}

template <typename T>
double quantile(std::span<const T> values, double p) {
  std::vector<T> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return quantile_sorted(std::span<const T>(sorted), p);
}

}  // namespace mvood

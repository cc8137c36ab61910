#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace pcqa {

/// Pairwise (cascade) summation. Rounding error grows like log2(n) instead of
/// n, and the result depends only on element order, so parallel stages that
/// fill a buffer and reduce it here give the same answer for any thread count.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 32) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return pairwise_sum(v) / static_cast<double>(v.size());
}

/// Population (divide-by-N) standard deviation.
inline double population_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  // two-pass: sum of squared deviations via a second pairwise reduction
  struct Dev {
    std::span<const double> v;
    double m;
    double sum(std::size_t lo, std::size_t hi) const {
      if (hi - lo <= 32) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
          const double d = v[i] - m;
          s += d * d;
        }
        return s;
      }
      const std::size_t mid = lo + (hi - lo) / 2;
      return sum(lo, mid) + sum(mid, hi);
    }
  };
  const double ss = Dev{v, m}.sum(0, v.size());
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace pcqa

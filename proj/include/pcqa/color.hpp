#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "pcqa/parallel.hpp"
#include "pcqa/point_cloud.hpp"

namespace pcqa {

/// Inverse sRGB companding for all 256 8-bit code values, computed once.
inline const std::array<double, 256>& srgb_linear_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double v = i / 255.0;
      t[i] = v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
    }
    return t;
  }();
  return table;
}

/// CIE L* of an 8-bit sRGB color: inverse companding, D65 relative luminance
/// (Y = 0.2126 R + 0.7152 G + 0.0722 B), then the cube-root lightness curve
/// with the linear segment below (6/29)^3. Result lies in [0, 100].
inline double srgb_lightness(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const auto& lut = srgb_linear_table();
  const double y = 0.2126 * lut[r] + 0.7152 * lut[g] + 0.0722 * lut[b];
  constexpr double delta = 6.0 / 29.0;
  constexpr double delta3 = delta * delta * delta;
  const double f = y > delta3 ? std::cbrt(y) : y / (3.0 * delta * delta) + 4.0 / 29.0;
  const double l = 116.0 * f - 16.0;
  return l < 0.0 ? 0.0 : (l > 100.0 ? 100.0 : l);
}

/// Fills cloud.lightness from cloud.colors, one value per point.
inline void compute_lightness(PointCloud& cloud, int threads = 1) {
  if (cloud.colors.size() != cloud.size())
    throw std::invalid_argument("compute_lightness: cloud has no per-point colors");
  srgb_linear_table();  // build the table before workers race to use it
  cloud.lightness.resize(cloud.size());
  parallel_for(cloud.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Rgb& c = cloud.colors[i];
      cloud.lightness[i] = srgb_lightness(c[0], c[1], c[2]);
    }
  });
}

}  // namespace pcqa

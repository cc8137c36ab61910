#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "pcqa/point_cloud.hpp"

namespace fixtures {

using pcqa::PointCloud;
using pcqa::Rgb;
using pcqa::Vec3;

inline Rgb color_from_position(const Vec3& p) {
  const auto ch = [](double v) {
    const double f = v - std::floor(v);
    return static_cast<std::uint8_t>(std::lround(f * 255.0));
  };
  return {ch(p.x * 0.13 + 0.2), ch(p.y * 0.29 + 0.5), ch(p.z * 0.41 + 0.8)};
}

/// m x m grid on the plane z = z0, spacing 1.
inline PointCloud plane_grid(int m, double z0 = 0.0, bool flat_color = false) {
  PointCloud pc;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const Vec3 p{static_cast<double>(i), static_cast<double>(j), z0};
      pc.positions.push_back(p);
      pc.colors.push_back(flat_color ? Rgb{128, 128, 128} : color_from_position(p));
    }
  return pc;
}

/// Grid on the plane x + y + z = 0 spanned by two orthonormal in-plane axes.
inline PointCloud tilted_plane_grid(int m) {
  PointCloud pc;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  const double inv_sqrt6 = 1.0 / std::sqrt(6.0);
  const Vec3 u{inv_sqrt2, -inv_sqrt2, 0.0};
  const Vec3 v{inv_sqrt6, inv_sqrt6, -2.0 * inv_sqrt6};
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const Vec3 p = static_cast<double>(i) * u + static_cast<double>(j) * v;
      pc.positions.push_back(p);
      pc.colors.push_back(color_from_position(p));
    }
  return pc;
}

/// Deterministic quasi-uniform sphere samples (Fibonacci spiral).
inline PointCloud sphere_cloud(int n, double radius = 10.0) {
  PointCloud pc;
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  for (int i = 0; i < n; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / n;
    const double phi = std::acos(1.0 - 2.0 * t);
    const double theta = 2.0 * M_PI * static_cast<double>(i) / golden;
    const Vec3 p{radius * std::sin(phi) * std::cos(theta), radius * std::sin(phi) * std::sin(theta),
                 radius * std::cos(phi)};
    pc.positions.push_back(p);
    pc.colors.push_back(color_from_position(p));
  }
  return pc;
}

inline PointCloud random_blob(int n, std::uint32_t seed, double extent = 10.0) {
  PointCloud pc;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, extent);
  std::uniform_int_distribution<int> col(0, 255);
  for (int i = 0; i < n; ++i) {
    pc.positions.push_back({pos(rng), pos(rng), pos(rng)});
    pc.colors.push_back({static_cast<std::uint8_t>(col(rng)), static_cast<std::uint8_t>(col(rng)),
                         static_cast<std::uint8_t>(col(rng))});
  }
  return pc;
}

/// m^3 lattice with a smooth color gradient along each axis.
inline PointCloud gradient_cube(int m) {
  PointCloud pc;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) {
        pc.positions.push_back({static_cast<double>(i), static_cast<double>(j),
                                static_cast<double>(k)});
        const auto ch = [m](int a) { return static_cast<std::uint8_t>(a * 255 / std::max(1, m - 1)); };
        pc.colors.push_back({ch(i), ch(j), ch(k)});
      }
  return pc;
}

inline PointCloud one_point_cloud() {
  PointCloud pc;
  pc.positions.push_back({1.0, 2.0, 3.0});
  pc.colors.push_back({10, 200, 30});
  return pc;
}

/// Independent radial offsets of fixed magnitude r, random directions.
inline PointCloud with_radial_noise(const PointCloud& src, double r, std::uint32_t seed) {
  PointCloud pc = src;
  pc.lightness.clear();
  pc.normals.clear();
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Vec3& p : pc.positions) {
    Vec3 dir{gauss(rng), gauss(rng), gauss(rng)};
    const double len = pcqa::norm(dir);
    if (len > 0.0) p = p + (r / len) * dir;
  }
  return pc;
}

inline PointCloud with_color_noise(const PointCloud& src, int amplitude, std::uint32_t seed) {
  PointCloud pc = src;
  pc.lightness.clear();
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> jitter(-amplitude, amplitude);
  for (Rgb& c : pc.colors)
    for (auto& ch : c) {
      const int v = static_cast<int>(ch) + jitter(rng);
      ch = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
    }
  return pc;
}

struct Mat3x3 {
  double m[3][3];
  Vec3 apply(const Vec3& p) const {
    return {m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z};
  }
};

inline Mat3x3 rotation_from_axis_angle(Vec3 axis, double angle) {
  const double len = pcqa::norm(axis);
  axis = (1.0 / len) * axis;
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return {{{t * axis.x * axis.x + c, t * axis.x * axis.y - s * axis.z, t * axis.x * axis.z + s * axis.y},
           {t * axis.x * axis.y + s * axis.z, t * axis.y * axis.y + c, t * axis.y * axis.z - s * axis.x},
           {t * axis.x * axis.z - s * axis.y, t * axis.y * axis.z + s * axis.x, t * axis.z * axis.z + c}}};
}

inline PointCloud transformed(const PointCloud& src, const Mat3x3& rot, const Vec3& shift) {
  PointCloud pc = src;
  for (Vec3& p : pc.positions) p = rot.apply(p) + shift;
  return pc;
}

/// Unique temp directory, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto base = std::filesystem::temp_directory_path();
    static std::atomic<int> counter{0};
    path_ = base / ("pcqa_test_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures

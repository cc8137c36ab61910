#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcqa {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, const Vec3& v) { return {s * v.x, s * v.y, s * v.z}; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double squared_norm(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(squared_norm(v)); }

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

using Rgb = std::array<std::uint8_t, 3>;

/// Colored point cloud. Positions and colors are always present and aligned;
/// lightness and normals are derived attributes filled in by compute_lightness
/// and estimate_normals respectively (empty until then).
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Rgb> colors;
  std::vector<double> lightness;
  std::vector<Vec3> normals;

  std::size_t size() const noexcept { return positions.size(); }
  bool has_lightness() const noexcept { return !lightness.empty(); }
  bool has_normals() const noexcept { return !normals.empty(); }
};

/// Throws std::invalid_argument when the parallel-array invariants are broken:
/// mismatched attribute lengths, lightness outside [0,100], non-unit normals.
inline void check_valid(const PointCloud& pc) {
  if (pc.positions.empty()) throw std::invalid_argument("point cloud is empty");
  if (pc.colors.size() != pc.size())
    throw std::invalid_argument("point cloud has " + std::to_string(pc.size()) + " positions but " +
                                std::to_string(pc.colors.size()) + " colors");
  if (pc.has_lightness()) {
    if (pc.lightness.size() != pc.size())
      throw std::invalid_argument("lightness length mismatch");
    for (double l : pc.lightness)
      if (!(l >= 0.0 && l <= 100.0)) throw std::invalid_argument("lightness value outside [0,100]");
  }
  if (pc.has_normals()) {
    if (pc.normals.size() != pc.size()) throw std::invalid_argument("normals length mismatch");
    for (const Vec3& n : pc.normals)
      if (std::abs(norm(n) - 1.0) > 1e-6) throw std::invalid_argument("normal is not unit length");
  }
}

}  // namespace pcqa

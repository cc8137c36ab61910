#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "pcqa/kdtree.hpp"
#include "pcqa/parallel.hpp"
#include "pcqa/point_cloud.hpp"

namespace pcqa {

struct Mat3 {
  double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
};

struct EigenSym3 {
  std::array<double, 3> values;  // ascending
  std::array<Vec3, 3> vectors;   // orthonormal, vectors[i] pairs with values[i]
};

/// Cyclic Jacobi eigendecomposition of a symmetric 3x3 matrix. Converges in a
/// handful of sweeps; resulting columns are orthonormal to machine precision.
inline EigenSym3 eigen_sym3(Mat3 a) {
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off2 = a.m[0][1] * a.m[0][1] + a.m[0][2] * a.m[0][2] + a.m[1][2] * a.m[1][2];
    const double fro2 = off2 * 2.0 + a.m[0][0] * a.m[0][0] + a.m[1][1] * a.m[1][1] + a.m[2][2] * a.m[2][2];
    if (off2 <= 1e-30 * fro2 || fro2 == 0.0) break;
    static constexpr int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (const auto& pq : pairs) {
      const int p = pq[0], q = pq[1];
      const double apq = a.m[p][q];
      if (apq == 0.0) continue;
      const double theta = (a.m[q][q] - a.m[p][p]) / (2.0 * apq);
      const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
      const double c = 1.0 / std::sqrt(t * t + 1.0);
      const double s = t * c;
      const double app = a.m[p][p], aqq = a.m[q][q];
      a.m[p][p] = app - t * apq;
      a.m[q][q] = aqq + t * apq;
      a.m[p][q] = a.m[q][p] = 0.0;
      const int r = 3 - p - q;  // the remaining axis
      const double arp = a.m[r][p], arq = a.m[r][q];
      a.m[r][p] = a.m[p][r] = c * arp - s * arq;
      a.m[r][q] = a.m[q][r] = s * arp + c * arq;
      for (int i = 0; i < 3; ++i) {
        const double vip = v[i][p], viq = v[i][q];
        v[i][p] = c * vip - s * viq;
        v[i][q] = s * vip + c * viq;
      }
    }
  }
  std::array<int, 3> idx = {0, 1, 2};
  const double d[3] = {a.m[0][0], a.m[1][1], a.m[2][2]};
  std::sort(idx.begin(), idx.end(), [&](int i, int j) {
    if (d[i] != d[j]) return d[i] < d[j];
    return i < j;
  });
  EigenSym3 out;
  for (int k = 0; k < 3; ++k) {
    out.values[static_cast<std::size_t>(k)] = d[idx[static_cast<std::size_t>(k)]];
    const int c = idx[static_cast<std::size_t>(k)];
    out.vectors[static_cast<std::size_t>(k)] = {v[0][c], v[1][c], v[2][c]};
  }
  return out;
}

/// Unit normal of the best-fit plane through the given points: the
/// eigenvector of the smallest covariance eigenvalue. Sign is arbitrary.
/// Sets degenerate (and returns +z) when the points have no spatial extent.
inline Vec3 fit_plane_normal(std::span<const Vec3> pts, bool& degenerate) {
  degenerate = false;
  if (pts.size() < 3) {
    degenerate = true;
    return {0.0, 0.0, 1.0};
  }
  Vec3 centroid{0, 0, 0};
  for (const Vec3& p : pts) centroid = centroid + p;
  centroid = (1.0 / static_cast<double>(pts.size())) * centroid;
  Mat3 cov;
  for (const Vec3& p : pts) {
    const Vec3 d = p - centroid;
    cov.m[0][0] += d.x * d.x;
    cov.m[0][1] += d.x * d.y;
    cov.m[0][2] += d.x * d.z;
    cov.m[1][1] += d.y * d.y;
    cov.m[1][2] += d.y * d.z;
    cov.m[2][2] += d.z * d.z;
  }
  cov.m[1][0] = cov.m[0][1];
  cov.m[2][0] = cov.m[0][2];
  cov.m[2][1] = cov.m[1][2];
  const double trace = cov.m[0][0] + cov.m[1][1] + cov.m[2][2];
  if (trace <= 1e-18 * std::max(1.0, squared_norm(centroid))) {
    degenerate = true;
    return {0.0, 0.0, 1.0};
  }
  const EigenSym3 eig = eigen_sym3(cov);
  Vec3 n = eig.vectors[0];
  const double len = norm(n);
  return (1.0 / len) * n;
}

/// Estimates a unit surface normal per point by plane fitting over the k_n
/// nearest neighbors plus the point itself. Returns per-point degeneracy
/// flags (1 = coincident neighborhood, normal defaulted to +z). Orientation
/// is arbitrary; downstream use squares the projection.
inline std::vector<std::uint8_t> estimate_normals(PointCloud& cloud, const KdTree& index, int k_n,
                                                  int threads = 1) {
  if (cloud.size() < 3) throw std::invalid_argument("estimate_normals: need at least 3 points");
  if (k_n < 2) throw std::invalid_argument("estimate_normals: k_n must be >= 2");
  cloud.normals.assign(cloud.size(), Vec3{});
  std::vector<std::uint8_t> degenerate(cloud.size(), 0);
  parallel_for(cloud.size(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<Neighbor> nbrs;
    std::vector<Vec3> patch;
    for (std::size_t i = begin; i < end; ++i) {
      index.knn_of_point(static_cast<std::uint32_t>(i), k_n, nbrs);
      patch.clear();
      patch.push_back(cloud.positions[i]);
      for (const Neighbor& nb : nbrs) patch.push_back(cloud.positions[nb.index]);
      bool bad = false;
      cloud.normals[i] = fit_plane_normal(patch, bad);
      degenerate[i] = bad ? 1 : 0;
    }
  });
  return degenerate;
}

}  // namespace pcqa

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "pcqa/parallel.hpp"
#include "pcqa/point_cloud.hpp"

namespace pcqa {

struct Neighbor {
  std::uint32_t index;  // index into the indexed cloud
  double d2;            // squared Euclidean distance to the query
};

/// (d2, index) lexicographic order. The index part turns every query result
/// into a strict total order, so equal-distance ties always resolve to the
/// smallest original point index, independent of traversal order.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  if (a.d2 != b.d2) return a.d2 < b.d2;
  return a.index < b.index;
}

/// Balanced KD-tree over 3D points: median split on the widest-spread axis,
/// original point indices kept at the leaves. Immutable after construction;
/// concurrent queries are safe.
class KdTree {
 public:
  static constexpr std::uint32_t no_exclude = std::numeric_limits<std::uint32_t>::max();

  explicit KdTree(std::span<const Vec3> points) {
    if (points.empty()) throw std::invalid_argument("KdTree: empty point set");
    n_ = points.size();
    std::vector<std::uint32_t> order(n_);
    std::iota(order.begin(), order.end(), 0u);
    nodes_.reserve(2 * n_ / kLeafSize + 2);
    build(points, order, 0, n_);
    // reorder coordinates once so leaf scans are contiguous
    pts_.resize(3 * n_);
    orig_.resize(n_);
    slot_of_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      const Vec3& p = points[order[i]];
      pts_[3 * i] = p.x;
      pts_[3 * i + 1] = p.y;
      pts_[3 * i + 2] = p.z;
      orig_[i] = order[i];
      slot_of_[order[i]] = static_cast<std::uint32_t>(i);
    }
  }

  explicit KdTree(const std::vector<Vec3>& points) : KdTree(std::span<const Vec3>(points)) {}

  std::size_t size() const noexcept { return n_; }

  /// Single nearest neighbor; ties broken by smallest point index.
  Neighbor nearest(const Vec3& query) const {
    const double q[3] = {query.x, query.y, query.z};
    Neighbor best{no_exclude, std::numeric_limits<double>::infinity()};
    nearest_rec(0, q, no_exclude, best);
    return best;
  }

  /// K nearest neighbors of an external query point, sorted ascending by
  /// (distance, index). Returns fewer than k when the cloud is smaller.
  void knn(const Vec3& query, int k, std::vector<Neighbor>& out) const {
    const double q[3] = {query.x, query.y, query.z};
    knn_impl(q, k, no_exclude, out);
  }

  std::vector<Neighbor> knn(const Vec3& query, int k) const {
    std::vector<Neighbor> out;
    knn(query, k, out);
    return out;
  }

  /// K nearest neighbors of an indexed point, excluding the point itself.
  void knn_of_point(std::uint32_t point_index, int k, std::vector<Neighbor>& out) const {
    const std::uint32_t slot = slot_of_[point_index];
    const double q[3] = {pts_[3 * slot], pts_[3 * slot + 1], pts_[3 * slot + 2]};
    knn_impl(q, k, point_index, out);
  }

  std::vector<Neighbor> knn_of_point(std::uint32_t point_index, int k) const {
    std::vector<Neighbor> out;
    knn_of_point(point_index, k, out);
    return out;
  }

 private:
  static constexpr std::size_t kLeafSize = 16;

  struct Node {
    double split = 0.0;
    std::uint32_t a = 0, b = 0;  // leaf: [a, b) point range; inner: child node ids
    std::uint8_t axis = kLeafAxis;
  };
  static constexpr std::uint8_t kLeafAxis = 3;

  std::size_t n_ = 0;
  std::vector<Node> nodes_;
  std::vector<double> pts_;            // reordered, 3 per point
  std::vector<std::uint32_t> orig_;    // storage slot -> original index
  std::vector<std::uint32_t> slot_of_; // original index -> storage slot

  std::uint32_t build(std::span<const Vec3> points, std::vector<std::uint32_t>& order,
                      std::size_t lo, std::size_t hi) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    if (hi - lo <= kLeafSize) {
      nodes_[id].a = static_cast<std::uint32_t>(lo);
      nodes_[id].b = static_cast<std::uint32_t>(hi);
      nodes_[id].axis = kLeafAxis;
      return id;
    }
    double mn[3] = {points[order[lo]].x, points[order[lo]].y, points[order[lo]].z};
    double mx[3] = {mn[0], mn[1], mn[2]};
    for (std::size_t i = lo + 1; i < hi; ++i) {
      const Vec3& p = points[order[i]];
      const double c[3] = {p.x, p.y, p.z};
      for (int a = 0; a < 3; ++a) {
        mn[a] = std::min(mn[a], c[a]);
        mx[a] = std::max(mx[a], c[a]);
      }
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (mx[a] - mn[a] > mx[axis] - mn[axis]) axis = a;
    const std::size_t mid = lo + (hi - lo) / 2;
    const auto coord = [&](std::uint32_t idx) -> double {
      const Vec3& p = points[idx];
      return axis == 0 ? p.x : (axis == 1 ? p.y : p.z);
    };
    std::nth_element(order.begin() + static_cast<std::ptrdiff_t>(lo),
                     order.begin() + static_cast<std::ptrdiff_t>(mid),
                     order.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](std::uint32_t i, std::uint32_t j) {
                       const double ci = coord(i), cj = coord(j);
                       if (ci != cj) return ci < cj;
                       return i < j;
                     });
    const double split = coord(order[mid]);
    const std::uint32_t left = build(points, order, lo, mid);
    const std::uint32_t right = build(points, order, mid, hi);
    nodes_[id].split = split;
    nodes_[id].a = left;
    nodes_[id].b = right;
    nodes_[id].axis = static_cast<std::uint8_t>(axis);
    return id;
  }

  void nearest_rec(std::uint32_t node_id, const double q[3], std::uint32_t exclude,
                   Neighbor& best) const {
    const Node& node = nodes_[node_id];
    if (node.axis == kLeafAxis) {
      for (std::uint32_t i = node.a; i < node.b; ++i) {
        const std::uint32_t oi = orig_[i];
        if (oi == exclude) continue;
        const double dx = q[0] - pts_[3 * i];
        const double dy = q[1] - pts_[3 * i + 1];
        const double dz = q[2] - pts_[3 * i + 2];
        const double d2 = dx * dx + dy * dy + dz * dz;
        if (d2 < best.d2 || (d2 == best.d2 && oi < best.index)) best = {oi, d2};
      }
      return;
    }
    const double delta = q[node.axis] - node.split;
    const std::uint32_t near_child = delta < 0.0 ? node.a : node.b;
    const std::uint32_t far_child = delta < 0.0 ? node.b : node.a;
    nearest_rec(near_child, q, exclude, best);
    // non-strict bound: an equal-distance smaller index may sit on the far side
    if (delta * delta <= best.d2) nearest_rec(far_child, q, exclude, best);
  }

  struct Heap {
    std::vector<Neighbor>& v;
    std::size_t cap;
    bool full() const { return v.size() == cap; }
    double bound() const {
      return v.size() == cap ? v.front().d2 : std::numeric_limits<double>::infinity();
    }
    void offer(Neighbor cand) {
      if (v.size() < cap) {
        v.push_back(cand);
        std::push_heap(v.begin(), v.end(), neighbor_less);
      } else if (neighbor_less(cand, v.front())) {
        std::pop_heap(v.begin(), v.end(), neighbor_less);
        v.back() = cand;
        std::push_heap(v.begin(), v.end(), neighbor_less);
      }
    }
  };

  void knn_impl(const double q[3], int k, std::uint32_t exclude, std::vector<Neighbor>& out) const {
    out.clear();
    if (k <= 0) throw std::invalid_argument("knn: k must be positive");
    Heap heap{out, static_cast<std::size_t>(k)};
    knn_rec(0, q, exclude, heap);
    std::sort(out.begin(), out.end(), neighbor_less);
  }

  void knn_rec(std::uint32_t node_id, const double q[3], std::uint32_t exclude, Heap& heap) const {
    const Node& node = nodes_[node_id];
    if (node.axis == kLeafAxis) {
      for (std::uint32_t i = node.a; i < node.b; ++i) {
        const std::uint32_t oi = orig_[i];
        if (oi == exclude) continue;
        const double dx = q[0] - pts_[3 * i];
        const double dy = q[1] - pts_[3 * i + 1];
        const double dz = q[2] - pts_[3 * i + 2];
        heap.offer({oi, dx * dx + dy * dy + dz * dz});
      }
      return;
    }
    const double delta = q[node.axis] - node.split;
    const std::uint32_t near_child = delta < 0.0 ? node.a : node.b;
    const std::uint32_t far_child = delta < 0.0 ? node.b : node.a;
    knn_rec(near_child, q, exclude, heap);
    if (!heap.full() || delta * delta <= heap.bound()) knn_rec(far_child, q, exclude, heap);
  }
};

/// Index of the nearest indexed point for every query position, in query
/// order. Optionally also returns the squared distances.
inline std::vector<std::uint32_t> nearest_indices(const KdTree& tree, std::span<const Vec3> queries,
                                                  std::vector<double>* d2_out = nullptr,
                                                  int threads = 1) {
  std::vector<std::uint32_t> idx(queries.size());
  if (d2_out) d2_out->resize(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Neighbor nn = tree.nearest(queries[i]);
      idx[i] = nn.index;
      if (d2_out) (*d2_out)[i] = nn.d2;
    }
  });
  return idx;
}

/// Builds the selected subset cloud: positions, colors and (when present)
/// lightness of the chosen source points, duplicates allowed.
inline PointCloud gather_points(const PointCloud& src, std::span<const std::uint32_t> selection) {
  PointCloud out;
  out.positions.reserve(selection.size());
  out.colors.reserve(selection.size());
  if (src.has_lightness()) out.lightness.reserve(selection.size());
  for (std::uint32_t s : selection) {
    out.positions.push_back(src.positions[s]);
    out.colors.push_back(src.colors[s]);
    if (src.has_lightness()) out.lightness.push_back(src.lightness[s]);
  }
  return out;
}

/// Correspondence sampling: point i of the result is the distorted point
/// nearest to reference point i. The result always has exactly |ref| points;
/// several reference points may select the same distorted point.
inline PointCloud sample_correspondence(const PointCloud& ref, const PointCloud& dist,
                                        const KdTree& dist_tree, int threads = 1) {
  if (ref.positions.empty() || dist.positions.empty())
    throw std::invalid_argument("sample_correspondence: empty cloud");
  const std::vector<std::uint32_t> sel = nearest_indices(dist_tree, ref.positions, nullptr, threads);
  return gather_points(dist, sel);
}

}  // namespace pcqa

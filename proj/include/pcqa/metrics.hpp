#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "pcqa/color.hpp"
#include "pcqa/kdtree.hpp"
#include "pcqa/normals.hpp"
#include "pcqa/numeric.hpp"
#include "pcqa/parallel.hpp"
#include "pcqa/point_cloud.hpp"

namespace pcqa {

struct MetricConfig {
  int k3 = 20;                  // neighborhood size for the lightness variance score
  int k4 = 5;                   // neighborhood size for the graph variation score
  int k_n = 20;                 // neighborhood size for normal estimation
  bool sampling_enabled = true; // correspondence-sample the distorted cloud for S3/S4
  double epsilon_std = 1e-9;    // degeneracy threshold for the S4 denominator
};

/// The five quality scores for one (reference, distorted) pair plus the raw
/// error values they were derived from. Each s_i lies in (0, 1]; s1..s4 are
/// 1/(1+e) of their raw error, s5 is the clamped point-count ratio.
struct FeatureVector {
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0;
  double e_p2point = 0, e_p2plane = 0, e_bvar = 0, e_gvar = 0;
};

struct StageTiming {
  double lightness = 0;
  double index_build = 0;
  double correspondence = 0;  // nearest-neighbor passes in both directions
  double graph_ref = 0;       // reference KNN lists
  double normals = 0;
  double sampling = 0;        // gather + sampled-cloud index + its KNN lists
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0;
  double total = 0;
};

namespace metric_detail {

class StageClock {
 public:
  explicit StageClock(StageTiming* out) : out_(out), last_(clock::now()) {}
  void lap(double StageTiming::* field) {
    const auto now = clock::now();
    if (out_) out_->*field += std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }
 private:
  using clock = std::chrono::steady_clock;
  StageTiming* out_;
  clock::time_point last_;
};

/// Fixed-width neighbor index lists, row i = neighbors of point i sorted
/// ascending by (distance, index). Shorter rows happen only when the cloud
/// has fewer than k other points.
struct KnnLists {
  int k = 0;
  std::size_t n = 0;
  std::vector<std::uint32_t> flat;
  std::vector<std::uint16_t> counts;

  std::span<const std::uint32_t> row(std::size_t i) const {
    return {flat.data() + i * static_cast<std::size_t>(k), counts[i]};
  }
  std::span<const std::uint32_t> row_prefix(std::size_t i, int want) const {
    const std::size_t len = std::min<std::size_t>(counts[i], static_cast<std::size_t>(want));
    return {flat.data() + i * static_cast<std::size_t>(k), len};
  }
};

inline KnnLists build_knn_lists(const KdTree& tree, int k, int threads) {
  KnnLists lists;
  lists.k = k;
  lists.n = tree.size();
  lists.flat.resize(lists.n * static_cast<std::size_t>(k));
  lists.counts.resize(lists.n);
  parallel_for(lists.n, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<Neighbor> nbrs;
    for (std::size_t i = begin; i < end; ++i) {
      tree.knn_of_point(static_cast<std::uint32_t>(i), k, nbrs);
      lists.counts[i] = static_cast<std::uint16_t>(nbrs.size());
      std::uint32_t* dst = lists.flat.data() + i * static_cast<std::size_t>(k);
      for (std::size_t j = 0; j < nbrs.size(); ++j) dst[j] = nbrs[j].index;
    }
  });
  return lists;
}

/// Population standard deviation of the neighbors' lightness (the center
/// point is not part of the neighborhood).
inline double neighborhood_sigma(std::span<const std::uint32_t> nbrs, std::span<const double> l) {
  if (nbrs.empty()) return 0.0;
  double sum = 0.0;
  for (std::uint32_t j : nbrs) sum += l[j];
  const double mu = sum / static_cast<double>(nbrs.size());
  double ss = 0.0;
  for (std::uint32_t j : nbrs) {
    const double d = l[j] - mu;
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(nbrs.size()));
}

/// Total variation at a point: sum of absolute lightness differences to its
/// neighbors.
inline double neighborhood_variation(double l_center, std::span<const std::uint32_t> nbrs,
                                     std::span<const double> l) {
  double sum = 0.0;
  for (std::uint32_t j : nbrs) sum += std::abs(l_center - l[j]);
  return sum;
}

inline std::vector<double> sigma_per_point(const KnnLists& lists, int k, std::span<const double> l,
                                           int threads) {
  std::vector<double> out(lists.n);
  parallel_for(lists.n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      out[i] = neighborhood_sigma(lists.row_prefix(i, k), l);
  });
  return out;
}

inline std::vector<double> variation_per_point(const KnnLists& lists, int k,
                                               std::span<const double> l, int threads) {
  std::vector<double> out(lists.n);
  parallel_for(lists.n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      out[i] = neighborhood_variation(l[i], lists.row_prefix(i, k), l);
  });
  return out;
}

inline double graph_variation_error(double std_ref, double std_dist, double epsilon_std) {
  if (std_ref <= epsilon_std) return std_dist <= epsilon_std ? 0.0 : 1.0;
  return std::abs(std_ref - std_dist) / std_ref;
}

}  // namespace metric_detail

/// Symmetric point-to-point error: mean squared nearest-neighbor distance in
/// each direction, averaged, and its score 1/(1+E).
inline std::pair<double, double> score_p2point(const PointCloud& ref, const PointCloud& dist,
                                               const KdTree& ref_tree, const KdTree& dist_tree,
                                               int threads = 1) {
  if (ref.positions.empty() || dist.positions.empty())
    throw std::invalid_argument("score_p2point: empty cloud");
  std::vector<double> d2_ref(ref.size()), d2_dist(dist.size());
  parallel_for(ref.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) d2_ref[i] = dist_tree.nearest(ref.positions[i]).d2;
  });
  parallel_for(dist.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) d2_dist[j] = ref_tree.nearest(dist.positions[j]).d2;
  });
  const double e = 0.5 * (mean(d2_ref) + mean(d2_dist));
  return {e, 1.0 / (1.0 + e)};
}

/// Asymmetric point-to-plane error (distorted to reference only): mean squared
/// projection of the nearest-neighbor error vector onto the reference normal.
inline std::pair<double, double> score_p2plane(const PointCloud& ref, const PointCloud& dist,
                                               const KdTree& ref_tree, int threads = 1) {
  if (!ref.has_normals())
    throw std::invalid_argument("score_p2plane: reference normals are not populated");
  std::vector<double> proj2(dist.size());
  parallel_for(dist.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const Neighbor nn = ref_tree.nearest(dist.positions[j]);
      const double p = dot(dist.positions[j] - ref.positions[nn.index], ref.normals[nn.index]);
      proj2[j] = p * p;
    }
  });
  const double e = mean(proj2);
  return {e, 1.0 / (1.0 + e)};
}

/// Local lightness variance error: per reference point, the squared difference
/// between the lightness standard deviation of its k3-neighborhood and that of
/// the paired point in the distorted-side cloud, averaged.
///
/// When `correspondence` is empty, point i pairs with point i if the clouds
/// have equal size (the sample_correspondence layout), otherwise with the
/// distorted-side point nearest to reference point i.
inline std::pair<double, double> score_lightness_variance(
    const PointCloud& ref, const PointCloud& dcloud, const KdTree& ref_tree, const KdTree& d_tree,
    int k3, std::span<const std::uint32_t> correspondence = {}, int threads = 1) {
  using namespace metric_detail;
  if (!ref.has_lightness() || !dcloud.has_lightness())
    throw std::invalid_argument("score_lightness_variance: lightness is not populated");
  const KnnLists ref_lists = build_knn_lists(ref_tree, k3, threads);
  const KnnLists d_lists = build_knn_lists(d_tree, k3, threads);
  const std::vector<double> sigma_r = sigma_per_point(ref_lists, k3, ref.lightness, threads);
  const std::vector<double> sigma_d = sigma_per_point(d_lists, k3, dcloud.lightness, threads);

  std::vector<std::uint32_t> owned_corr;
  if (correspondence.empty() && dcloud.size() != ref.size()) {
    owned_corr = nearest_indices(d_tree, ref.positions, nullptr, threads);
    correspondence = owned_corr;
  }
  std::vector<double> diff2(ref.size());
  parallel_for(ref.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double sd = correspondence.empty() ? sigma_d[i] : sigma_d[correspondence[i]];
      const double d = sigma_r[i] - sd;
      diff2[i] = d * d;
    }
  });
  const double e = mean(diff2);
  return {e, 1.0 / (1.0 + e)};
}

/// Graph signal variation error: per point, the total variation of lightness
/// over its k4-neighborhood; the error is the relative difference of the
/// population standard deviations of the two per-point variation vectors.
inline std::pair<double, double> score_graph_variation(const PointCloud& ref,
                                                       const PointCloud& dcloud,
                                                       const KdTree& ref_tree, const KdTree& d_tree,
                                                       int k4, double epsilon_std = 1e-9,
                                                       int threads = 1) {
  using namespace metric_detail;
  if (!ref.has_lightness() || !dcloud.has_lightness())
    throw std::invalid_argument("score_graph_variation: lightness is not populated");
  const KnnLists ref_lists = build_knn_lists(ref_tree, k4, threads);
  const KnnLists d_lists = build_knn_lists(d_tree, k4, threads);
  const std::vector<double> v_r = variation_per_point(ref_lists, k4, ref.lightness, threads);
  const std::vector<double> v_d = variation_per_point(d_lists, k4, dcloud.lightness, threads);
  const double e = graph_variation_error(population_std(v_r), population_std(v_d), epsilon_std);
  return {e, 1.0 / (1.0 + e)};
}

/// Point count penalty: min(1, |dist| / |ref|).
inline double score_point_count(std::size_t n_dist, std::size_t n_ref) {
  if (n_ref == 0) throw std::invalid_argument("score_point_count: empty reference");
  const double ratio = static_cast<double>(n_dist) / static_cast<double>(n_ref);
  return ratio > 1.0 ? 1.0 : ratio;
}

/// Full five-score pipeline for one (reference, distorted) pair. Neighborhood
/// searches are shared across scores: one KNN pass per cloud at the widest
/// required width, with the narrower scores reading prefixes, and the
/// distorted-to-reference correspondences reused between S1, S2 and sampling.
/// Results are identical to running the five single-score operations.
inline FeatureVector compute_features(const PointCloud& ref_in, const PointCloud& dist_in,
                                      const MetricConfig& config = {}, int threads = 1,
                                      StageTiming* timing = nullptr) {
  using namespace metric_detail;
  check_valid(ref_in);
  check_valid(dist_in);
  if (config.k3 < 1 || config.k4 < 1 || config.k_n < 1)
    throw std::invalid_argument("compute_features: neighborhood sizes must be >= 1");

  const auto t_start = std::chrono::steady_clock::now();
  StageClock clock(timing);

  PointCloud ref = ref_in;
  PointCloud dist = dist_in;
  compute_lightness(ref, threads);
  compute_lightness(dist, threads);
  clock.lap(&StageTiming::lightness);

  KdTree ref_tree(ref.positions);
  KdTree dist_tree(dist.positions);
  clock.lap(&StageTiming::index_build);

  // nearest-neighbor correspondences, both directions
  std::vector<double> d2_ref_to_dist, d2_dist_to_ref;
  const std::vector<std::uint32_t> nn_in_dist =
      nearest_indices(dist_tree, ref.positions, &d2_ref_to_dist, threads);
  const std::vector<std::uint32_t> nn_in_ref =
      nearest_indices(ref_tree, dist.positions, &d2_dist_to_ref, threads);
  clock.lap(&StageTiming::correspondence);

  FeatureVector fv;
  fv.e_p2point = 0.5 * (mean(d2_ref_to_dist) + mean(d2_dist_to_ref));
  fv.s1 = 1.0 / (1.0 + fv.e_p2point);
  clock.lap(&StageTiming::s1);

  // one KNN pass over the reference at the widest width all scores need
  const int k_ref = std::max(std::max(config.k3, config.k4), config.k_n);
  const KnnLists ref_lists = build_knn_lists(ref_tree, k_ref, threads);
  clock.lap(&StageTiming::graph_ref);

  ref.normals.assign(ref.size(), Vec3{});
  parallel_for(ref.size(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<Vec3> patch;
    for (std::size_t i = begin; i < end; ++i) {
      const auto nbrs = ref_lists.row_prefix(i, config.k_n);
      patch.clear();
      patch.push_back(ref.positions[i]);
      for (std::uint32_t j : nbrs) patch.push_back(ref.positions[j]);
      bool degenerate = false;
      ref.normals[i] = fit_plane_normal(patch, degenerate);
    }
  });
  clock.lap(&StageTiming::normals);

  {
    std::vector<double> proj2(dist.size());
    parallel_for(dist.size(), threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t j = begin; j < end; ++j) {
        const std::uint32_t a = nn_in_ref[j];
        const double p = dot(dist.positions[j] - ref.positions[a], ref.normals[a]);
        proj2[j] = p * p;
      }
    });
    fv.e_p2plane = mean(proj2);
    fv.s2 = 1.0 / (1.0 + fv.e_p2plane);
  }
  clock.lap(&StageTiming::s2);

  // distorted-side cloud for S3/S4: the correspondence-sampled cloud, or the
  // distorted cloud itself with explicit pairing when sampling is disabled
  const int k_d = std::max(config.k3, config.k4);
  PointCloud sampled;
  const PointCloud* dside = &dist;
  std::span<const std::uint32_t> pairing = nn_in_dist;
  KnnLists d_lists;
  if (config.sampling_enabled) {
    sampled = gather_points(dist, nn_in_dist);
    dside = &sampled;
    pairing = {};
    KdTree sampled_tree(sampled.positions);
    d_lists = build_knn_lists(sampled_tree, k_d, threads);
  } else {
    d_lists = build_knn_lists(dist_tree, k_d, threads);
  }
  clock.lap(&StageTiming::sampling);

  {
    const std::vector<double> sigma_r = sigma_per_point(ref_lists, config.k3, ref.lightness, threads);
    const std::vector<double> sigma_d = sigma_per_point(d_lists, config.k3, dside->lightness, threads);
    std::vector<double> diff2(ref.size());
    parallel_for(ref.size(), threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const double sd = pairing.empty() ? sigma_d[i] : sigma_d[pairing[i]];
        const double d = sigma_r[i] - sd;
        diff2[i] = d * d;
      }
    });
    fv.e_bvar = mean(diff2);
    fv.s3 = 1.0 / (1.0 + fv.e_bvar);
  }
  clock.lap(&StageTiming::s3);

  {
    const std::vector<double> v_r = variation_per_point(ref_lists, config.k4, ref.lightness, threads);
    const std::vector<double> v_d = variation_per_point(d_lists, config.k4, dside->lightness, threads);
    fv.e_gvar = graph_variation_error(population_std(v_r), population_std(v_d), config.epsilon_std);
    fv.s4 = 1.0 / (1.0 + fv.e_gvar);
  }
  clock.lap(&StageTiming::s4);

  fv.s5 = score_point_count(dist.size(), ref.size());
  clock.lap(&StageTiming::s5);

  if (timing)
    timing->total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return fv;
}

}  // namespace pcqa

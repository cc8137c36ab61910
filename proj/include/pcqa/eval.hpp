#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "pcqa/numeric.hpp"

namespace pcqa {

/// Pearson linear correlation. Returns 0 when either argument has zero
/// variance (degenerate input).
inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("pearson: need at least 3 samples");
  const double mx = mean(x);
  const double my = mean(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

/// Fractional (average) ranks, 1-based; tied values share the mean of the
/// positions they occupy.
inline std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (v[a] != v[b]) return v[a] < v[b];
    return a < b;
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank-order correlation: Pearson correlation of average ranks.
/// Returns 0 when either vector is constant.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("spearman: need at least 3 samples");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  return pearson(rx, ry);
}

/// Monotone four-parameter logistic curve used to map objective scores onto
/// the subjective scale before computing PLCC.
struct Logistic4 {
  double b1 = 0, b2 = 0, b3 = 0, b4 = 1;
  bool identity_fallback = false;

  double operator()(double x) const {
    if (identity_fallback) return x;
    double t = (x - b3) / b4;
    t = std::clamp(t, -500.0, 500.0);
    return (b1 - b2) / (1.0 + std::exp(-t)) + b2;
  }
};

namespace eval_detail {

inline double logistic4_sse(const double p[4], std::span<const double> x, std::span<const double> y) {
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double t = (x[i] - p[2]) / p[3];
    t = std::clamp(t, -500.0, 500.0);
    const double fx = (p[0] - p[1]) / (1.0 + std::exp(-t)) + p[1];
    const double r = fx - y[i];
    sse += r * r;
  }
  return std::isfinite(sse) ? sse : std::numeric_limits<double>::max();
}

/// Nelder-Mead simplex descent on the 4PL squared error. Deterministic:
/// fixed coefficients, fixed iteration cap, relative-improvement stop.
inline double nelder_mead_logistic4(double p[4], std::span<const double> x,
                                    std::span<const double> y, double scale_y, double scale_x,
                                    int max_iters = 2000) {
  constexpr int dim = 4;
  double simplex[dim + 1][dim];
  double fval[dim + 1];
  const double steps[dim] = {0.25 * scale_y + 1e-6, 0.25 * scale_y + 1e-6,
                             0.5 * scale_x + 1e-6, 0.5 * std::abs(p[3]) + 1e-6};
  for (int v = 0; v <= dim; ++v) {
    for (int c = 0; c < dim; ++c) simplex[v][c] = p[c];
    if (v > 0) simplex[v][v - 1] += steps[v - 1];
    fval[v] = logistic4_sse(simplex[v], x, y);
  }
  const auto order = [&] {
    int idx[dim + 1] = {0, 1, 2, 3, 4};
    std::sort(idx, idx + dim + 1, [&](int a, int b) {
      if (fval[a] != fval[b]) return fval[a] < fval[b];
      return a < b;
    });
    double s2[dim + 1][dim];
    double f2[dim + 1];
    for (int v = 0; v <= dim; ++v) {
      for (int c = 0; c < dim; ++c) s2[v][c] = simplex[idx[v]][c];
      f2[v] = fval[idx[v]];
    }
    std::copy(&s2[0][0], &s2[0][0] + (dim + 1) * dim, &simplex[0][0]);
    std::copy(f2, f2 + dim + 1, fval);
  };
  for (int iter = 0; iter < max_iters; ++iter) {
    order();
    if (fval[dim] - fval[0] <= 1e-10 * (std::abs(fval[0]) + std::abs(fval[dim]) + 1e-300)) break;
    double centroid[dim] = {0, 0, 0, 0};
    for (int v = 0; v < dim; ++v)
      for (int c = 0; c < dim; ++c) centroid[c] += simplex[v][c] / dim;
    double refl[dim];
    for (int c = 0; c < dim; ++c) refl[c] = centroid[c] + (centroid[c] - simplex[dim][c]);
    const double f_refl = logistic4_sse(refl, x, y);
    if (f_refl < fval[0]) {
      double expd[dim];
      for (int c = 0; c < dim; ++c) expd[c] = centroid[c] + 2.0 * (centroid[c] - simplex[dim][c]);
      const double f_exp = logistic4_sse(expd, x, y);
      if (f_exp < f_refl) { std::copy(expd, expd + dim, simplex[dim]); fval[dim] = f_exp; }
      else { std::copy(refl, refl + dim, simplex[dim]); fval[dim] = f_refl; }
      continue;
    }
    if (f_refl < fval[dim - 1]) {
      std::copy(refl, refl + dim, simplex[dim]);
      fval[dim] = f_refl;
      continue;
    }
    double contr[dim];
    const bool outside = f_refl < fval[dim];
    const double* base = outside ? refl : simplex[dim];
    for (int c = 0; c < dim; ++c) contr[c] = centroid[c] + 0.5 * (base[c] - centroid[c]);
    const double f_contr = logistic4_sse(contr, x, y);
    if (f_contr < std::min(f_refl, fval[dim])) {
      std::copy(contr, contr + dim, simplex[dim]);
      fval[dim] = f_contr;
      continue;
    }
    for (int v = 1; v <= dim; ++v) {  // shrink toward the best vertex
      for (int c = 0; c < dim; ++c) simplex[v][c] = simplex[0][c] + 0.5 * (simplex[v][c] - simplex[0][c]);
      fval[v] = logistic4_sse(simplex[v], x, y);
    }
  }
  order();
  std::copy(simplex[0], simplex[0] + dim, p);
  return fval[0];
}

}  // namespace eval_detail

/// Fits the 4PL mapping from predictions to MOS by least squares.
/// Initialization follows the usual convention: b1 = max(mos), b2 = min(mos),
/// b3 = median(pred), b4 = std(pred)/4; a mirrored start (b4 negated) is also
/// tried so decreasing relations fit equally well. Falls back to the identity
/// mapping when the predictions are constant or when the fitted mapping
/// correlates worse than the raw predictions.
inline Logistic4 fit_logistic4(std::span<const double> predictions, std::span<const double> mos) {
  if (predictions.size() != mos.size()) throw std::invalid_argument("fit_logistic4: length mismatch");
  if (predictions.size() < 5) throw std::invalid_argument("fit_logistic4: need at least 5 samples");
  for (double v : predictions)
    if (!std::isfinite(v)) throw std::invalid_argument("fit_logistic4: non-finite prediction");
  for (double v : mos)
    if (!std::isfinite(v)) throw std::invalid_argument("fit_logistic4: non-finite mos");

  const double sd_pred = population_std(predictions);
  Logistic4 out;
  if (sd_pred <= 1e-12) {
    out.identity_fallback = true;
    return out;
  }
  std::vector<double> sorted(predictions.begin(), predictions.end());
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  const double y_max = *std::max_element(mos.begin(), mos.end());
  const double y_min = *std::min_element(mos.begin(), mos.end());

  double best[4] = {y_max, y_min, median, sd_pred / 4.0};
  double best_sse = std::numeric_limits<double>::max();
  for (const double b4_sign : {1.0, -1.0}) {
    double p[4] = {y_max, y_min, median, b4_sign * sd_pred / 4.0};
    if (p[3] == 0.0) p[3] = b4_sign;
    const double sse =
        eval_detail::nelder_mead_logistic4(p, predictions, mos, y_max - y_min, sd_pred);
    if (sse < best_sse) {
      best_sse = sse;
      std::copy(p, p + 4, best);
    }
  }
  out.b1 = best[0];
  out.b2 = best[1];
  out.b3 = best[2];
  out.b4 = best[3];

  std::vector<double> mapped(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) mapped[i] = out(predictions[i]);
  if (pearson(mapped, mos) < pearson(predictions, mos)) out.identity_fallback = true;
  return out;
}

/// Correlation report for one prediction/MOS set: fitted 4PL curve, PLCC of
/// the mapped predictions, SROCC of the raw predictions, and the mapped RMSE.
struct EvalReport {
  Logistic4 curve;
  double plcc = 0.0;
  double srocc = 0.0;
  double rmse = 0.0;
  std::size_t n = 0;
};

inline EvalReport evaluate_predictions(std::span<const double> predictions,
                                       std::span<const double> mos) {
  EvalReport report;
  report.n = predictions.size();
  report.curve = fit_logistic4(predictions, mos);
  std::vector<double> mapped(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) mapped[i] = report.curve(predictions[i]);
  report.plcc = pearson(mapped, mos);
  report.srocc = spearman(predictions, mos);
  std::vector<double> sq(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double r = mapped[i] - mos[i];
    sq[i] = r * r;
  }
  report.rmse = std::sqrt(mean(sq));
  return report;
}

}  // namespace pcqa

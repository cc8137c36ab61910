#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcqa/numeric.hpp"

namespace pcqa {

/// Row-major dense matrix of doubles.
struct DataMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  DataMatrix() = default;
  DataMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double* row(std::size_t i) { return values.data() + i * cols; }
  const double* row(std::size_t i) const { return values.data() + i * cols; }
  std::span<const double> row_span(std::size_t i) const { return {row(i), cols}; }
  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

struct SvrHyperparams {
  double C = 1.0;
  double epsilon = -1.0;   // < 0: auto, 0.1 * population std of the targets
  double gamma = -1.0;     // <= 0: auto, 1 / feature dimension
  double kkt_tolerance = 1e-3;
  std::uint64_t max_passes = 1000000;  // pair updates
};

/// Trained epsilon-SVR with Gaussian RBF kernel. Support vectors are stored in
/// standardized feature space; predict() standardizes its input with the
/// model's own means/scales, so train and predict can never disagree on scale.
struct SvrModel {
  std::size_t dim = 0;
  double gamma = 0.0;
  double C = 0.0;
  double epsilon = 0.0;
  double bias = 0.0;
  std::vector<double> means;   // per feature
  std::vector<double> scales;  // per feature, > 0
  DataMatrix support_vectors;  // standardized rows
  std::vector<double> coefficients;
  bool converged = false;
  std::uint64_t iterations = 0;
  double final_kkt_violation = 0.0;

  double predict(std::span<const double> x) const {
    if (x.size() != dim)
      throw std::invalid_argument("SvrModel::predict: expected " + std::to_string(dim) +
                                  " features, got " + std::to_string(x.size()));
    std::vector<double> xs(dim);
    for (std::size_t j = 0; j < dim; ++j) xs[j] = (x[j] - means[j]) / scales[j];
    double acc = bias;
    for (std::size_t i = 0; i < coefficients.size(); ++i) {
      const double* sv = support_vectors.row(i);
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = xs[j] - sv[j];
        d2 += d * d;
      }
      acc += coefficients[i] * std::exp(-gamma * d2);
    }
    return acc;
  }
};

/// Per-column mean and population standard deviation; columns with
/// (near-)zero spread get scale 1 so standardization stays a bijection.
inline std::pair<std::vector<double>, std::vector<double>> standardize_fit(const DataMatrix& x) {
  if (x.rows == 0) throw std::invalid_argument("standardize_fit: empty matrix");
  std::vector<double> means(x.cols, 0.0), scales(x.cols, 1.0);
  std::vector<double> col(x.rows);
  for (std::size_t j = 0; j < x.cols; ++j) {
    for (std::size_t i = 0; i < x.rows; ++i) col[i] = x.at(i, j);
    means[j] = mean(col);
    const double sd = population_std(col);
    scales[j] = sd <= 1e-12 ? 1.0 : sd;
  }
  return {means, scales};
}

namespace svr_detail {

/// RBF kernel rows over standardized data, computed on demand. All rows fit
/// in the cache for the training-set sizes this project targets; beyond the
/// capacity the least recently used row is recomputed when needed again.
class KernelCache {
 public:
  KernelCache(const DataMatrix& xs, double gamma, std::size_t capacity_rows)
      : xs_(xs), gamma_(gamma) {
    cap_ = std::max<std::size_t>(4, std::min(capacity_rows, xs.rows));
    slots_.resize(cap_);
    slot_of_.assign(xs_.rows, SIZE_MAX);
  }

  const double* row(std::size_t i) {
    std::size_t s = slot_of_[i];
    if (s != SIZE_MAX) {
      slots_[s].stamp = ++tick_;
      return slots_[s].values.data();
    }
    s = place();
    Slot& slot = slots_[s];
    if (slot.owner != SIZE_MAX) slot_of_[slot.owner] = SIZE_MAX;
    slot.owner = i;
    slot.stamp = ++tick_;
    slot.values.resize(xs_.rows);
    compute_row(i, slot.values.data());
    slot_of_[i] = s;
    return slot.values.data();
  }

 private:
  struct Slot {
    std::size_t owner = SIZE_MAX;
    std::uint64_t stamp = 0;
    std::vector<double> values;
  };

  std::size_t place() {
    if (used_ < cap_) return used_++;
    std::size_t lru = 0;
    for (std::size_t s = 1; s < cap_; ++s)
      if (slots_[s].stamp < slots_[lru].stamp) lru = s;
    return lru;
  }

  void compute_row(std::size_t i, double* out) const {
    const double* xi = xs_.row(i);
    for (std::size_t j = 0; j < xs_.rows; ++j) {
      const double* xj = xs_.row(j);
      double d2 = 0.0;
      for (std::size_t c = 0; c < xs_.cols; ++c) {
        const double d = xi[c] - xj[c];
        d2 += d * d;
      }
      out[j] = std::exp(-gamma_ * d2);
    }
  }

  const DataMatrix& xs_;
  double gamma_;
  std::size_t cap_ = 0;
  std::size_t used_ = 0;
  std::uint64_t tick_ = 0;
  std::vector<Slot> slots_;
  std::vector<std::size_t> slot_of_;
};

/// Dual objective in the beta formulation:
///   W(b) = sum_i y_i b_i - eps * sum_i |b_i| - 1/2 sum_ij b_i b_j K_ij
inline double dual_objective(std::span<const double> beta, std::span<const double> f,
                             std::span<const double> y, double eps) {
  double w = 0.0;
  for (std::size_t i = 0; i < beta.size(); ++i)
    w += y[i] * beta[i] - eps * std::abs(beta[i]) - 0.5 * beta[i] * f[i];
  return w;
}

}  // namespace svr_detail

/// Trains epsilon-SVR by sequential minimal optimization on the dual:
/// maximize  -1/2 b'Kb - eps*sum|b_i| + sum y_i b_i   s.t. sum b_i = 0, |b_i| <= C.
/// Each step picks the maximally KKT-violating (raise, lower) pair and solves
/// the one-dimensional subproblem exactly, clipped at box and sign
/// breakpoints. Fully deterministic. When `objective_trace` is given, the
/// dual objective is recorded after every pair update.
inline SvrModel train_svr(const DataMatrix& features, std::span<const double> targets,
                          const SvrHyperparams& hp = {},
                          std::vector<double>* objective_trace = nullptr) {
  using namespace svr_detail;
  const std::size_t n = features.rows;
  const std::size_t d = features.cols;
  if (n == 0 || d == 0) throw std::invalid_argument("train_svr: empty training set");
  if (targets.size() != n) throw std::invalid_argument("train_svr: targets/features size mismatch");
  for (double v : features.values)
    if (!std::isfinite(v)) throw std::invalid_argument("train_svr: non-finite feature value");
  for (double v : targets)
    if (!std::isfinite(v)) throw std::invalid_argument("train_svr: non-finite target value");
  if (hp.C <= 0.0) throw std::invalid_argument("train_svr: C must be positive");

  SvrModel model;
  model.dim = d;
  model.C = hp.C;
  model.epsilon = hp.epsilon >= 0.0 ? hp.epsilon : 0.1 * population_std(targets);
  model.gamma = hp.gamma > 0.0 ? hp.gamma : 1.0 / static_cast<double>(d);
  auto [means, scales] = standardize_fit(features);
  model.means = std::move(means);
  model.scales = std::move(scales);

  DataMatrix xs(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      xs.at(i, j) = (features.at(i, j) - model.means[j]) / model.scales[j];

  const double C = model.C;
  const double eps = model.epsilon;
  constexpr std::size_t kCacheBudgetBytes = 256u << 20;
  KernelCache cache(xs, model.gamma, kCacheBudgetBytes / (sizeof(double) * std::max<std::size_t>(n, 1)));

  std::vector<double> beta(n, 0.0);
  std::vector<double> f(n, 0.0);  // f_i = sum_j beta_j K_ij

  // candidate slopes for raising/lowering one beta under sum(beta) = 0
  struct Scan {
    double up = -std::numeric_limits<double>::infinity();
    double dn = std::numeric_limits<double>::infinity();
    std::ptrdiff_t i_up = -1, i_dn = -1;
  };
  const auto scan = [&]() {
    Scan s;
    for (std::size_t i = 0; i < n; ++i) {
      const double F = targets[i] - f[i];
      if (beta[i] < C) {
        const double u = beta[i] >= 0.0 ? F - eps : F + eps;
        if (u > s.up) { s.up = u; s.i_up = static_cast<std::ptrdiff_t>(i); }
      }
      if (beta[i] > -C) {
        const double l = beta[i] > 0.0 ? F - eps : F + eps;
        if (l < s.dn) { s.dn = l; s.i_dn = static_cast<std::ptrdiff_t>(i); }
      }
    }
    return s;
  };

  std::uint64_t iters = 0;
  Scan last = scan();
  while (true) {
    const double violation = last.up - last.dn;
    if (!(violation > hp.kkt_tolerance)) {
      model.converged = true;
      break;
    }
    if (iters >= hp.max_passes) break;
    const auto i = static_cast<std::size_t>(last.i_up);
    const auto j = static_cast<std::size_t>(last.i_dn);

    // cache capacity >= 4 and LRU eviction keep the two most recently
    // fetched rows alive, so ki stays valid across the row(j) fetch
    const double* ki = cache.row(i);
    const double kjj = cache.row(j)[j];
    const double eta = ki[i] + kjj - 2.0 * ki[j];
    double delta = eta > 0.0 ? violation / eta : std::numeric_limits<double>::infinity();
    // clip at the first breakpoint: box bounds and sign changes
    double limit = std::min(C - beta[i], beta[j] + C);
    if (beta[i] < 0.0) limit = std::min(limit, -beta[i]);
    if (beta[j] > 0.0) limit = std::min(limit, beta[j]);
    if (delta > limit) delta = limit;

    double nb_i = beta[i] + delta;
    double nb_j = beta[j] - delta;
    // snap exactly onto the breakpoint that was hit
    if (delta == C - beta[i]) nb_i = C;
    else if (beta[i] < 0.0 && delta == -beta[i]) nb_i = 0.0;
    if (delta == beta[j] + C) nb_j = -C;
    else if (beta[j] > 0.0 && delta == beta[j]) nb_j = 0.0;
    beta[i] = nb_i;
    beta[j] = nb_j;

    const double* kj = cache.row(j);
    const double* ki2 = cache.row(i);
    for (std::size_t k = 0; k < n; ++k) f[k] += delta * (ki2[k] - kj[k]);
    ++iters;
    if (objective_trace) objective_trace->push_back(dual_objective(beta, f, targets, eps));
    last = scan();
  }
  model.iterations = iters;
  model.final_kkt_violation = std::max(0.0, last.up - last.dn);

  // bias: average the values implied by unbounded support vectors, else the
  // midpoint of the feasible interval from the final scan
  double b_sum = 0.0;
  std::size_t b_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (beta[i] > 0.0 && beta[i] < C) { b_sum += targets[i] - f[i] - eps; ++b_count; }
    else if (beta[i] < 0.0 && beta[i] > -C) { b_sum += targets[i] - f[i] + eps; ++b_count; }
  }
  if (b_count > 0) model.bias = b_sum / static_cast<double>(b_count);
  else if (last.i_up >= 0 && last.i_dn >= 0) model.bias = 0.5 * (last.up + last.dn);
  else model.bias = mean(targets);

  std::size_t m = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (beta[i] != 0.0) ++m;
  model.support_vectors = DataMatrix(m, d);
  model.coefficients.reserve(m);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (beta[i] == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) model.support_vectors.at(r, j) = xs.at(i, j);
    model.coefficients.push_back(beta[i]);
    ++r;
  }
  return model;
}

inline constexpr int kSvrModelSchemaVersion = 1;

/// Self-describing JSON model file; doubles round-trip exactly.
inline void save_svr_model(const SvrModel& model, const std::string& path) {
  nlohmann::json j;
  j["schema_version"] = kSvrModelSchemaVersion;
  j["kernel"] = "rbf";
  j["gamma"] = model.gamma;
  j["C"] = model.C;
  j["epsilon"] = model.epsilon;
  j["bias"] = model.bias;
  j["means"] = model.means;
  j["scales"] = model.scales;
  nlohmann::json svs = nlohmann::json::array();
  for (std::size_t i = 0; i < model.support_vectors.rows; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < model.dim; ++c) row.push_back(model.support_vectors.at(i, c));
    svs.push_back(std::move(row));
  }
  j["support_vectors"] = std::move(svs);
  j["coefficients"] = model.coefficients;
  j["converged"] = model.converged;
  j["iterations"] = model.iterations;
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open file for writing");
  out << j.dump(1) << "\n";
  if (!out.flush()) throw std::runtime_error(path + ": write failed");
}

inline SvrModel load_svr_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open model file");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": invalid model file: " + e.what());
  }
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kSvrModelSchemaVersion)
      throw std::runtime_error(path + ": unsupported schema_version " + std::to_string(version) +
                               " (expected " + std::to_string(kSvrModelSchemaVersion) + ")");
    if (j.at("kernel").get<std::string>() != "rbf")
      throw std::runtime_error(path + ": unsupported kernel '" + j.at("kernel").get<std::string>() + "'");
    SvrModel model;
    model.gamma = j.at("gamma").get<double>();
    model.C = j.at("C").get<double>();
    model.epsilon = j.at("epsilon").get<double>();
    model.bias = j.at("bias").get<double>();
    model.means = j.at("means").get<std::vector<double>>();
    model.scales = j.at("scales").get<std::vector<double>>();
    model.dim = model.means.size();
    if (model.scales.size() != model.dim)
      throw std::runtime_error(path + ": means/scales length mismatch");
    for (double s : model.scales)
      if (!(s > 0.0)) throw std::runtime_error(path + ": non-positive feature scale");
    const auto& svs = j.at("support_vectors");
    model.coefficients = j.at("coefficients").get<std::vector<double>>();
    if (svs.size() != model.coefficients.size())
      throw std::runtime_error(path + ": support_vectors/coefficients length mismatch");
    model.support_vectors = DataMatrix(svs.size(), model.dim);
    for (std::size_t i = 0; i < svs.size(); ++i) {
      if (svs[i].size() != model.dim)
        throw std::runtime_error(path + ": support vector row has wrong dimension");
      for (std::size_t c = 0; c < model.dim; ++c)
        model.support_vectors.at(i, c) = svs[i][c].get<double>();
    }
    model.converged = j.at("converged").get<bool>();
    model.iterations = j.at("iterations").get<std::uint64_t>();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": invalid model file: " + e.what());
  }
}

}  // namespace pcqa

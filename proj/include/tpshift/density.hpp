#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "tpshift/data.hpp"
#include "tpshift/errors.hpp"
#include "tpshift/glm.hpp"
#include "tpshift/hal.hpp"
#include "tpshift/stats.hpp"

namespace tpshift {

/// Linear basis phi(W): optional intercept plus a subset of covariate columns.
struct LinearBasis {
  bool intercept = true;
  bool all_columns = true;
  std::vector<int> columns;

  static LinearBasis all() { return {}; }
  static LinearBasis intercept_only() { return {true, false, {}}; }
  static LinearBasis select(std::vector<int> cols) { return {true, false, std::move(cols)}; }

  Eigen::MatrixXd design(const Eigen::MatrixXd& W) const {
    const Eigen::Index k = all_columns ? W.cols() : static_cast<Eigen::Index>(columns.size());
    Eigen::MatrixXd X(W.rows(), k + (intercept ? 1 : 0));
    Eigen::Index c = 0;
    if (intercept) X.col(c++).setOnes();
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index src = all_columns ? j : columns[static_cast<std::size_t>(j)];
      if (src < 0 || src >= W.cols()) throw ConfigError("linear basis column out of range");
      X.col(c++) = W.col(src);
    }
    return X;
  }

  bool operator==(const LinearBasis&) const = default;
};

// ---------------------------------------------------------------------------
// Gaussian working model

struct GaussianDensityModel {
  LinearBasis basis;
  GlmFit mean_fit;
  double sigma2 = 1.0;

  double mean(RowRef w) const {
    const Eigen::MatrixXd X = basis.design(Eigen::MatrixXd(w));
    return (X * mean_fit.coefficients)(0);
  }
  Eigen::VectorXd means(const Eigen::MatrixXd& W) const { return basis.design(W) * mean_fit.coefficients; }
  double density(double a, RowRef w) const { return normal_pdf(a, mean(w), sigma2); }

  /// sup{a : density(a | w) >= eps}; -inf when the peak density is below eps.
  double upper_support(RowRef w, double eps) const {
    const double r2 = -2.0 * sigma2 * std::log(eps * std::sqrt(2.0 * std::numbers::pi * sigma2));
    if (r2 < 0.0) return -std::numeric_limits<double>::infinity();
    return mean(w) + std::sqrt(r2);
  }
};

inline GaussianDensityModel fit_gaussian_density(const Eigen::VectorXd& a, const Eigen::MatrixXd& W,
                                                 const Eigen::VectorXd& weights,
                                                 const LinearBasis& basis = LinearBasis::all()) {
  const Eigen::MatrixXd X = basis.design(W);
  const auto effective = (weights.array() > 0.0).count();
  if (effective < X.cols() + 1) {
    throw FitError("fit_gaussian_density: needs at least " + std::to_string(X.cols() + 1) +
                   " observations with positive weight");
  }
  auto wls = fit_wls(X, a, weights);
  if (wls.residual_variance < 1e-12) throw FitError("degenerate exposure variance");
  return GaussianDensityModel{basis, std::move(wls.fit), wls.residual_variance};
}

// ---------------------------------------------------------------------------
// Pooled-hazard density estimator

enum class BinRule { equal_range, equal_mass };

inline const char* to_string(BinRule r) { return r == BinRule::equal_range ? "equal_range" : "equal_mass"; }

/// 1-based bin of `a` on the grid: bin t is [edges[t-1], edges[t]), except the
/// last bin, which also contains edges.back(). Returns 0 outside the grid.
inline int bin_of(double a, std::span<const double> edges) {
  if (edges.size() < 2 || !(a >= edges.front()) || !(a <= edges.back())) return 0;
  if (a == edges.back()) return static_cast<int>(edges.size()) - 1;
  auto it = std::upper_bound(edges.begin(), edges.end(), a);
  return static_cast<int>(it - edges.begin());
}

/// Bin probabilities from discrete hazards: m_t = h_t prod_{j<t} (1 - h_j),
/// renormalized so the masses sum to one.
inline std::vector<double> hazards_to_masses(std::span<const double> hazards) {
  std::vector<double> mass(hazards.size());
  double survive = 1.0, total = 0.0;
  for (std::size_t t = 0; t < hazards.size(); ++t) {
    mass[t] = hazards[t] * survive;
    survive *= 1.0 - hazards[t];
    total += mass[t];
  }
  if (total > 0.0) {
    for (auto& m : mass) m /= total;
  }
  return mass;
}

struct HazardLongFormat {
  std::vector<double> bin_edges;
  std::vector<int> bin;           // 1-based bin index of each long row
  Eigen::VectorXd in_bin;         // 1 on the row of the bin containing A
  Eigen::MatrixXd covariates;     // W of the source observation
  Eigen::VectorXd weight;         // source weight, replicated
  std::vector<std::size_t> source;

  std::size_t size() const { return bin.size(); }

  /// Hazard-regression design: bin index followed by the covariates.
  Eigen::MatrixXd design() const {
    Eigen::MatrixXd X(covariates.rows(), covariates.cols() + 1);
    for (std::size_t r = 0; r < bin.size(); ++r) X(static_cast<Eigen::Index>(r), 0) = bin[r];
    X.rightCols(covariates.cols()) = covariates;
    return X;
  }
};

/// An observation whose exposure falls in bin t contributes rows for bins
/// 1..t, with in_bin = 1 only on row t.
inline HazardLongFormat pool_hazard_format(const Eigen::VectorXd& a, const Eigen::MatrixXd& W,
                                           const Eigen::VectorXd& weights, std::span<const double> edges) {
  if (a.size() != W.rows() || a.size() != weights.size()) throw DataError("pool_hazard_format: length mismatch");
  HazardLongFormat out;
  out.bin_edges.assign(edges.begin(), edges.end());
  std::vector<int> bins(static_cast<std::size_t>(a.size()));
  std::size_t rows = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const int t = bin_of(a[i], edges);
    if (t == 0) throw DataError("exposure value outside the bin grid");
    bins[static_cast<std::size_t>(i)] = t;
    rows += static_cast<std::size_t>(t);
  }
  out.in_bin.resize(static_cast<Eigen::Index>(rows));
  out.covariates.resize(static_cast<Eigen::Index>(rows), W.cols());
  out.weight.resize(static_cast<Eigen::Index>(rows));
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const int t = bins[static_cast<std::size_t>(i)];
    for (int s = 1; s <= t; ++s, ++r) {
      out.bin.push_back(s);
      out.in_bin[r] = s == t ? 1.0 : 0.0;
      out.covariates.row(r) = W.row(i);
      out.weight[r] = weights[i];
      out.source.push_back(static_cast<std::size_t>(i));
    }
  }
  return out;
}

struct DensitySelection {
  int n_bins = 0;
  double lambda = 0.0;
  double cv_risk = 0.0;
};

struct CondDensityModel {
  std::vector<double> bin_edges;
  HalModel hazard_model;
  int n_bins_selected = 0;
  std::vector<DensitySelection> selection;
  std::vector<std::string> warnings;

  int n_bins() const { return static_cast<int>(bin_edges.size()) - 1; }
  int n_covariates() const { return hazard_model.basis.n_covariates - 1; }

  /// Renormalized bin masses, one row per row of W.
  Eigen::MatrixXd bin_masses(const Eigen::MatrixXd& W) const {
    if (W.cols() != n_covariates()) throw FitError("density model: covariate count mismatch");
    const int T = n_bins();
    Eigen::MatrixXd X(W.rows() * T, W.cols() + 1);
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      for (int t = 0; t < T; ++t) {
        X(i * T + t, 0) = t + 1;
        X.row(i * T + t).tail(W.cols()) = W.row(i);
      }
    }
    const Eigen::VectorXd h = hazard_model.predict(X);
    Eigen::MatrixXd masses(W.rows(), T);
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      const auto m = hazards_to_masses(std::span<const double>(h.data() + i * T, static_cast<std::size_t>(T)));
      for (int t = 0; t < T; ++t) masses(i, t) = m[static_cast<std::size_t>(t)];
    }
    return masses;
  }

  double width(int t) const { return bin_edges[static_cast<std::size_t>(t)] - bin_edges[static_cast<std::size_t>(t) - 1]; }

  double density_from_masses(double a, const Eigen::Ref<const Eigen::RowVectorXd>& masses) const {
    const int t = bin_of(a, bin_edges);
    if (t == 0) return 0.0;
    return masses(t - 1) / width(t);
  }

  double density(double a, RowRef w) const {
    const Eigen::MatrixXd m = bin_masses(Eigen::MatrixXd(w));
    return density_from_masses(a, m.row(0));
  }

  /// Right edge of the last bin whose density at w is at least eps.
  double upper_support(RowRef w, double eps) const {
    const Eigen::MatrixXd m = bin_masses(Eigen::MatrixXd(w));
    for (int t = n_bins(); t >= 1; --t) {
      if (m(0, t - 1) / width(t) >= eps) return bin_edges[static_cast<std::size_t>(t)];
    }
    return -std::numeric_limits<double>::infinity();
  }
};

struct HaldensifyConfig {
  std::vector<int> n_bins_grid{5, 10, 20};
  BinRule bin_rule = BinRule::equal_mass;
  HalConfig hal{.max_degree = 2, .max_knots_per_dim = 20, .n_lambda = 30};
  int cv_folds = 5;
  std::uint64_t seed = 1;
};

inline std::vector<double> make_bin_edges(const Eigen::VectorXd& a, int n_bins, BinRule rule) {
  const double lo = a.minCoeff(), hi = a.maxCoeff();
  std::vector<double> edges;
  if (rule == BinRule::equal_range) {
    for (int k = 0; k <= n_bins; ++k) edges.push_back(lo + (hi - lo) * k / n_bins);
    edges.back() = hi;
  } else {
    std::vector<double> sorted(a.data(), a.data() + a.size());
    std::sort(sorted.begin(), sorted.end());
    for (int k = 0; k <= n_bins; ++k) edges.push_back(quantile_type1(sorted, static_cast<double>(k) / n_bins));
    edges.front() = lo;
    edges.back() = hi;
    edges = sorted_unique(std::move(edges));
  }
  return edges;
}

namespace detail {

inline Eigen::MatrixXd hazard_eval_design(const Eigen::MatrixXd& W, const std::vector<Eigen::Index>& rows, int T) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()) * T, W.cols() + 1);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (int t = 0; t < T; ++t) {
      const auto r = static_cast<Eigen::Index>(k) * T + t;
      X(r, 0) = t + 1;
      X.row(r).tail(W.cols()) = W.row(rows[k]);
    }
  }
  return X;
}

}  // namespace detail

/// Pooled-hazard conditional density estimator with a HAL hazard model.
///
/// For every bin count T in the grid the exposure range is cut into T bins
/// and the long-format hazard data (bin index, W) -> in_bin is fitted by a
/// weighted binomial HAL along a lambda path. (T, lambda) is chosen jointly by
/// V-fold cross-validation (folds by source observation) on the weighted
/// negative log density, and the winner is refitted on all rows.
inline CondDensityModel fit_haldensify(const Eigen::VectorXd& a, const Eigen::MatrixXd& W,
                                       const Eigen::VectorXd& weights, const HaldensifyConfig& cfg) {
  const auto n = static_cast<std::size_t>(a.size());
  if (W.rows() != a.size() || weights.size() != a.size()) throw FitError("fit_haldensify: length mismatch");
  if (cfg.n_bins_grid.empty()) throw ConfigError("fit_haldensify: empty bin grid");
  const int max_bins = *std::max_element(cfg.n_bins_grid.begin(), cfg.n_bins_grid.end());
  if (n < 2 * static_cast<std::size_t>(max_bins)) {
    throw FitError("fit_haldensify: needs at least 2 * max(n_bins) observations");
  }
  if (!(weights.sum() > 0.0)) throw FitError("fit_haldensify: all weights are zero");
  const auto fold = assign_folds(n, cfg.cv_folds, cfg.seed);
  const double wsum = weights.sum();

  CondDensityModel best;
  double best_risk = std::numeric_limits<double>::infinity();
  std::vector<double> best_grid;
  std::size_t best_k = 0;
  BasisMap best_basis;
  HazardLongFormat best_long;
  std::vector<std::string> warnings;
  std::vector<DensitySelection> selection;

  for (int T : cfg.n_bins_grid) {
    const auto edges = make_bin_edges(a, T, cfg.bin_rule);
    const int bins = static_cast<int>(edges.size()) - 1;
    if (bins < 2) {
      warnings.push_back("n_bins=" + std::to_string(T) + " skipped: fewer than 2 distinct bins");
      continue;
    }
    if (cfg.bin_rule == BinRule::equal_range) {
      std::vector<int> counts(static_cast<std::size_t>(bins), 0);
      for (Eigen::Index i = 0; i < a.size(); ++i) ++counts[static_cast<std::size_t>(bin_of(a[i], edges) - 1)];
      if (std::find(counts.begin(), counts.end(), 0) != counts.end()) {
        warnings.push_back("n_bins=" + std::to_string(T) + " skipped: empty bin");
        continue;
      }
    }
    const HazardLongFormat pooled = pool_hazard_format(a, W, weights, edges);
    const Eigen::MatrixXd X = pooled.design();
    const BasisMap basis = build_basis(X, cfg.hal.max_degree, cfg.hal.max_knots_per_dim);
    const Eigen::MatrixXd Z = basis.design(X);
    std::vector<double> grid = default_lambda_grid(Z, pooled.in_bin, pooled.weight, cfg.hal);
    if (grid.empty()) grid = {0.0};

    std::vector<double> risk(grid.size(), 0.0);
    for (int f = 0; f < cfg.cv_folds; ++f) {
      std::vector<Eigen::Index> train, held;
      for (std::size_t r = 0; r < pooled.size(); ++r) {
        if (fold[pooled.source[r]] != f) train.push_back(static_cast<Eigen::Index>(r));
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (fold[i] == f) held.push_back(static_cast<Eigen::Index>(i));
      }
      if (held.empty() || train.empty()) continue;
      const LassoPath path = lasso_path(take_rows(Z, train), take_rows(pooled.in_bin, train),
                                        take_rows(pooled.weight, train), Family::binomial, grid, cfg.hal);
      const Eigen::MatrixXd Zh = basis.design(detail::hazard_eval_design(W, held, bins));
      Eigen::MatrixXd eta = Zh * path.betas;
      for (std::size_t k = 0; k < grid.size(); ++k) {
        eta.col(static_cast<Eigen::Index>(k)).array() += path.intercepts[k];
        std::vector<double> h(static_cast<std::size_t>(bins));
        for (std::size_t q = 0; q < held.size(); ++q) {
          for (int t = 0; t < bins; ++t) {
            h[static_cast<std::size_t>(t)] =
                clamp_prob(expit(eta(static_cast<Eigen::Index>(q) * bins + t, static_cast<Eigen::Index>(k))));
          }
          const auto mass = hazards_to_masses(h);
          const auto i = held[q];
          const int t = bin_of(a[i], edges);
          const double dens = mass[static_cast<std::size_t>(t - 1)] / (edges[static_cast<std::size_t>(t)] - edges[static_cast<std::size_t>(t - 1)]);
          risk[k] -= weights[i] * std::log(std::max(dens, 1e-300));
        }
      }
    }
    for (std::size_t k = 0; k < grid.size(); ++k) {
      risk[k] /= wsum;
      selection.push_back({bins, grid[k], risk[k]});
      if (risk[k] < best_risk) {
        best_risk = risk[k];
        best_grid = grid;
        best_k = k;
        best_basis = basis;
        best_long = pooled;
        best.bin_edges = edges;
        best.n_bins_selected = bins;
      }
    }
  }
  if (best_grid.empty()) throw FitError("fit_haldensify: every bin count was skipped");

  const Eigen::MatrixXd X = best_long.design();
  const Eigen::MatrixXd Z = best_basis.design(X);
  const std::span<const double> upto(best_grid.data(), best_k + 1);
  const LassoPath path = lasso_path(Z, best_long.in_bin, best_long.weight, Family::binomial, upto, cfg.hal);
  best.hazard_model = detail::make_model(best_basis, Family::binomial, path.intercepts.back(),
                                         path.betas.col(path.betas.cols() - 1), best_grid[best_k]);
  best.selection = std::move(selection);
  best.warnings = std::move(warnings);
  return best;
}

inline double predict_density(const CondDensityModel& model, double a, RowRef w) { return model.density(a, w); }

// ---------------------------------------------------------------------------
// Either model, behind one interface

using DensityModel = std::variant<GaussianDensityModel, CondDensityModel>;

inline double evaluate_density(const DensityModel& model, double a, RowRef w) {
  return std::visit([&](const auto& m) { return m.density(a, w); }, model);
}

inline double upper_support(const DensityModel& model, RowRef w, double eps) {
  return std::visit([&](const auto& m) { return m.upper_support(w, eps); }, model);
}

/// Density model conditioned on a fixed set of covariate rows, so repeated
/// evaluations at several exposure values reuse the per-row work.
class DensityTable {
 public:
  DensityTable(const DensityModel& model, const Eigen::MatrixXd& W) : model_(&model) {
    if (const auto* g = std::get_if<GaussianDensityModel>(&model)) {
      means_ = g->means(W);
    } else {
      masses_ = std::get<CondDensityModel>(model).bin_masses(W);
    }
  }

  double at(Eigen::Index row, double a) const {
    if (const auto* g = std::get_if<GaussianDensityModel>(model_)) return normal_pdf(a, means_[row], g->sigma2);
    return std::get<CondDensityModel>(*model_).density_from_masses(a, masses_.row(row));
  }

 private:
  const DensityModel* model_;
  Eigen::VectorXd means_;
  Eigen::MatrixXd masses_;
};

/// u(w) = sup{a : q(a | w) >= eps} from a fitted density.
inline SupportBound support_bound_from_density(const DensityModel& model, double eps) {
  return SupportBound([model, eps](RowRef w) { return upper_support(model, w, eps); });
}

}  // namespace tpshift

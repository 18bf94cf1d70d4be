#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tpshift/errors.hpp"
#include "tpshift/glm.hpp"
#include "tpshift/rng.hpp"
#include "tpshift/stats.hpp"

namespace tpshift {

// ---------------------------------------------------------------------------
// Zero-order indicator basis

/// One basis column: prod_k 1{x[covariates[k]] >= knots[k]}.
struct BasisTerm {
  std::vector<int> covariates;
  std::vector<double> knots;

  bool operator==(const BasisTerm&) const = default;
};

struct BasisMap {
  int n_covariates = 0;
  std::vector<std::vector<double>> knots;      // per covariate, ascending
  std::vector<std::vector<int>> interactions;  // covariate subsets in column order
  std::vector<BasisTerm> terms;                // one per column

  Eigen::Index size() const { return static_cast<Eigen::Index>(terms.size()); }

  double evaluate(std::size_t term, const Eigen::MatrixXd& X, Eigen::Index row) const {
    const auto& t = terms[term];
    for (std::size_t k = 0; k < t.covariates.size(); ++k) {
      if (X(row, t.covariates[k]) < t.knots[k]) return 0.0;
    }
    return 1.0;
  }

  Eigen::MatrixXd design(const Eigen::MatrixXd& X) const {
    if (X.cols() != n_covariates) throw FitError("HAL basis: covariate count mismatch");
    Eigen::MatrixXd Z(X.rows(), size());
    for (std::size_t j = 0; j < terms.size(); ++j) {
      for (Eigen::Index i = 0; i < X.rows(); ++i) Z(i, static_cast<Eigen::Index>(j)) = evaluate(j, X, i);
    }
    return Z;
  }

  std::optional<Eigen::Index> column_of(const BasisTerm& term) const {
    auto it = std::find(terms.begin(), terms.end(), term);
    if (it == terms.end()) return std::nullopt;
    return static_cast<Eigen::Index>(it - terms.begin());
  }
};

namespace detail {

inline std::vector<double> covariate_knots(const Eigen::VectorXd& column, int max_knots) {
  std::vector<double> values(column.data(), column.data() + column.size());
  std::vector<double> unique = sorted_unique(values);
  if (unique.size() <= 1) return {};
  if (static_cast<int>(unique.size()) <= max_knots) return unique;
  std::sort(values.begin(), values.end());
  std::vector<double> knots;
  for (int k = 0; k < max_knots; ++k) {
    knots.push_back(quantile_type1(values, static_cast<double>(k) / (max_knots - 1)));
  }
  return sorted_unique(std::move(knots));
}

inline void enumerate_subsets(const std::vector<int>& items, std::size_t size, std::size_t start,
                              std::vector<int>& current, std::vector<std::vector<int>>& out) {
  if (current.size() == size) {
    out.push_back(current);
    return;
  }
  for (std::size_t i = start; i < items.size(); ++i) {
    current.push_back(items[i]);
    enumerate_subsets(items, size, i + 1, current, out);
    current.pop_back();
  }
}

}  // namespace detail

/// Knots per covariate are its distinct values when there are at most
/// `max_knots_per_dim` of them, otherwise type-1 quantiles at equally spaced
/// probabilities. Each covariate subset of size <= max_degree contributes one
/// column per distinct knot tuple observed in the data (each coordinate
/// snapped down to its nearest knot). Constant covariates contribute nothing.
inline BasisMap build_basis(const Eigen::MatrixXd& X, int max_degree, int max_knots_per_dim) {
  if (max_degree < 1) throw ConfigError("HAL max_degree must be >= 1");
  if (max_knots_per_dim < 2) throw ConfigError("HAL max_knots_per_dim must be >= 2");
  BasisMap basis;
  basis.n_covariates = static_cast<int>(X.cols());
  std::vector<int> active;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    basis.knots.push_back(detail::covariate_knots(X.col(j), max_knots_per_dim));
    if (!basis.knots.back().empty()) active.push_back(static_cast<int>(j));
  }
  const auto degree = std::min<std::size_t>(static_cast<std::size_t>(max_degree), active.size());
  for (std::size_t d = 1; d <= degree; ++d) {
    std::vector<int> current;
    detail::enumerate_subsets(active, d, 0, current, basis.interactions);
  }
  for (const auto& subset : basis.interactions) {
    std::set<std::vector<double>> tuples;
    std::vector<double> tuple(subset.size());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      for (std::size_t k = 0; k < subset.size(); ++k) {
        const auto& kn = basis.knots[static_cast<std::size_t>(subset[k])];
        const double x = X(i, subset[k]);
        auto it = std::upper_bound(kn.begin(), kn.end(), x);
        tuple[k] = it == kn.begin() ? kn.front() : *std::prev(it);
      }
      tuples.insert(tuple);
    }
    for (const auto& t : tuples) basis.terms.push_back(BasisTerm{subset, t});
  }
  return basis;
}

// ---------------------------------------------------------------------------
// Weighted L1-penalized solver

struct HalConfig {
  int max_degree = 2;
  int max_knots_per_dim = 50;
  int n_lambda = 50;
  double lambda_min_ratio = 1e-4;
  /// Explicit descending grid; overrides n_lambda / lambda_min_ratio when set.
  std::vector<double> lambda_grid;
  int cv_folds = 5;
  std::uint64_t seed = 1;
  /// Relative objective-change tolerance for the binomial IRLS loop.
  double tol = 1e-7;
  /// Coordinate-descent tolerance on max_j a_j * (delta beta_j)^2, relative to
  /// the weighted working-response variance.
  double cd_tol = 1e-7;
  int max_outer = 100;
  int max_sweeps = 100000;
};

/// Coefficients along a lambda path: betas.col(k) pairs with lambdas[k].
struct LassoPath {
  std::vector<double> lambdas;
  std::vector<double> intercepts;
  Eigen::MatrixXd betas;
};

namespace detail {

inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

struct WlsLassoResult {
  double intercept = 0.0;
  /// Largest a_j * (delta beta_j)^2 over the first full sweep, and the
  /// threshold it is compared against. A first sweep below threshold means the
  /// warm start already solved this problem.
  double first_sweep_change = 0.0;
  double threshold = 0.0;
};

/// Minimizes 0.5 * sum_i v_i (z_i - b0 - Z_i beta)^2 + lambda * |beta|_1 by
/// cyclic coordinate descent over an active set, warm-started from beta.
/// Columns are centered with the v-weighted mean so the intercept is exact.
inline WlsLassoResult wls_lasso(const Eigen::MatrixXd& Z, const Eigen::VectorXd& z, const Eigen::VectorXd& v,
                                double lambda, Eigen::VectorXd& beta, const HalConfig& cfg) {
  const Eigen::Index p = Z.cols();
  const double vsum = v.sum();
  const Eigen::VectorXd xbar = (Z.transpose() * v) / vsum;
  Eigen::VectorXd a(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    a[j] = v.dot((Z.col(j).array() - xbar[j]).square().matrix());
  }
  const double zbar = v.dot(z) / vsum;
  const double zvar = std::max(v.dot((z.array() - zbar).square().matrix()), 1e-300);
  const double thresh = cfg.cd_tol * zvar;

  // u = v * r, with r = (z - zbar) - (Z - xbar) beta
  Eigen::VectorXd u = v.array() * (z.array() - zbar);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (beta[j] != 0.0) u.array() -= beta[j] * v.array() * (Z.col(j).array() - xbar[j]);
  }
  // Centering keeps sum(u) fixed under coordinate moves.
  const double usum = u.sum();

  auto update = [&](Eigen::Index j) -> double {
    // Constant under these weights: the column cannot move the residual.
    if (a[j] <= 1e-14 * vsum) {
      beta[j] = 0.0;
      return 0.0;
    }
    const double g = Z.col(j).dot(u) - xbar[j] * usum;
    const double old = beta[j];
    const double fresh = soft_threshold(g + a[j] * old, lambda) / a[j];
    if (fresh == old) return 0.0;
    const double diff = fresh - old;
    beta[j] = fresh;
    u.array() -= diff * v.array() * (Z.col(j).array() - xbar[j]);
    return a[j] * diff * diff;
  };

  WlsLassoResult out;
  out.threshold = thresh;
  int sweeps = 0;
  std::vector<Eigen::Index> active;
  while (sweeps < cfg.max_sweeps) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) max_change = std::max(max_change, update(j));
    if (sweeps == 0) out.first_sweep_change = max_change;
    ++sweeps;
    if (max_change < thresh) break;
    active.clear();
    for (Eigen::Index j = 0; j < p; ++j) {
      if (beta[j] != 0.0) active.push_back(j);
    }
    while (sweeps < cfg.max_sweeps) {
      double inner = 0.0;
      for (auto j : active) inner = std::max(inner, update(j));
      ++sweeps;
      if (inner < thresh) break;
    }
  }
  out.intercept = zbar - xbar.dot(beta);
  return out;
}

inline double binomial_objective(const Eigen::VectorXd& eta, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& w, double wsum, double lambda,
                                 const Eigen::VectorXd& beta) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) s += w[i] * (log1p_exp(eta[i]) - y[i] * eta[i]);
  return s / wsum + lambda * beta.cwiseAbs().sum();
}

inline double solve_at_lambda(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                              Family family, double lambda, Eigen::VectorXd& beta, double b0,
                              const HalConfig& cfg) {
  const double wsum = w.sum();
  if (family == Family::gaussian) {
    const Eigen::VectorXd v = w / wsum;
    return wls_lasso(Z, y, v, lambda, beta, cfg).intercept;
  }
  const Eigen::Index n = Z.rows();
  Eigen::VectorXd eta = (Z * beta).array() + b0;
  double obj = binomial_objective(eta, y, w, wsum, lambda, beta);
  Eigen::VectorXd v(n), zr(n);
  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = std::clamp(expit(eta[i]), 1e-5, 1.0 - 1e-5);
      const double var = mu * (1.0 - mu);
      v[i] = w[i] * var / wsum;
      zr[i] = eta[i] + (y[i] - mu) / var;
    }
    const Eigen::VectorXd beta_old = beta;
    const double b0_old = b0;
    const WlsLassoResult step = wls_lasso(Z, zr, v, lambda, beta, cfg);
    b0 = step.intercept;
    Eigen::VectorXd next_eta = (Z * beta).array() + b0;
    double next_obj = binomial_objective(next_eta, y, w, wsum, lambda, beta);
    for (int h = 0; h < 20 && next_obj > obj + 1e-12 * std::abs(obj); ++h) {
      beta = 0.5 * (beta + beta_old);
      b0 = 0.5 * (b0 + b0_old);
      next_eta = (Z * beta).array() + b0;
      next_obj = binomial_objective(next_eta, y, w, wsum, lambda, beta);
    }
    const double change = std::abs(obj - next_obj);
    const double intercept_move = v.sum() * (b0 - b0_old) * (b0 - b0_old);
    eta = std::move(next_eta);
    obj = next_obj;
    if (change < cfg.tol * std::max(1e-3, std::abs(obj))) break;
    // As in glmnet: stop once a pass over every coordinate moves nothing by
    // more than the coordinate-descent threshold.
    if (std::max(step.first_sweep_change, intercept_move) < step.threshold) break;
  }
  return b0;
}

inline double null_intercept(const Eigen::VectorXd& y, const Eigen::VectorXd& w, Family family) {
  const double m = w.dot(y) / w.sum();
  return family == Family::gaussian ? m : logit(clamp_prob(m));
}

inline double lambda_max(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  if (Z.cols() == 0) return 0.0;
  const Eigen::VectorXd v = w / w.sum();
  const double ybar = v.dot(y);
  const Eigen::VectorXd vr = v.array() * (y.array() - ybar);
  const Eigen::VectorXd xbar = Z.transpose() * v;
  const Eigen::VectorXd g = Z.transpose() * vr - xbar * vr.sum();
  return g.cwiseAbs().maxCoeff();
}

inline double pointwise_loss(Family family, double y, double eta) {
  if (family == Family::gaussian) return (y - eta) * (y - eta);
  const double mu = clamp_prob(expit(eta));
  return -(y * std::log(mu) + (1.0 - y) * std::log1p(-mu));
}

}  // namespace detail

/// Log-spaced grid from the data-driven lambda_max down to ratio * lambda_max.
inline std::vector<double> default_lambda_grid(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                                               const Eigen::VectorXd& w, const HalConfig& cfg) {
  if (!cfg.lambda_grid.empty()) return cfg.lambda_grid;
  const double top = detail::lambda_max(Z, y, w);
  if (!(top > 0.0)) return {};
  std::vector<double> grid(static_cast<std::size_t>(std::max(cfg.n_lambda, 1)));
  const double lo = std::log(cfg.lambda_min_ratio);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double frac = grid.size() == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(grid.size() - 1);
    grid[k] = top * std::exp(lo * frac);
  }
  return grid;
}

namespace detail {

/// Weighted binomial deviance divided by sum(w); fractional y allowed.
inline double binomial_deviance(const Eigen::VectorXd& eta, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (w[i] == 0.0) continue;
    double ent = 0.0;
    if (y[i] > 0.0 && y[i] < 1.0) ent = y[i] * std::log(y[i]) + (1.0 - y[i]) * std::log1p(-y[i]);
    s += w[i] * (log1p_exp(eta[i]) - y[i] * eta[i] + ent);
  }
  return 2.0 * s / w.sum();
}

}  // namespace detail

/// Warm-started solution path over a descending lambda grid.
///
/// Binomial paths stop early, as glmnet does, once the fraction of deviance
/// explained passes 0.999 or improves by less than 1e-5 between grid points;
/// the remaining grid points reuse the last solution. Beyond that point the
/// fit is near-separated and further iterations only chase diverging
/// coefficients.
inline LassoPath lasso_path(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                            Family family, std::span<const double> lambdas, const HalConfig& cfg) {
  LassoPath path;
  path.lambdas.assign(lambdas.begin(), lambdas.end());
  path.betas.resize(Z.cols(), static_cast<Eigen::Index>(lambdas.size()));
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(Z.cols());
  double b0 = detail::null_intercept(y, w, family);
  const double null_dev =
      family == Family::binomial ? detail::binomial_deviance(Eigen::VectorXd::Constant(y.size(), b0), y, w) : 0.0;
  double prev_ratio = 0.0;
  bool stopped = false;
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    if (!stopped) {
      b0 = detail::solve_at_lambda(Z, y, w, family, lambdas[k], beta, b0, cfg);
      if (family == Family::binomial && null_dev > 0.0) {
        const Eigen::VectorXd eta = (Z * beta).array() + b0;
        const double ratio = 1.0 - detail::binomial_deviance(eta, y, w) / null_dev;
        if (ratio > 0.999 || (k > 0 && ratio - prev_ratio < 1e-5 * ratio)) stopped = true;
        prev_ratio = ratio;
      }
    }
    path.intercepts.push_back(b0);
    path.betas.col(static_cast<Eigen::Index>(k)) = beta;
  }
  return path;
}

/// Fold index per row; rows sharing a group id always share a fold.
inline std::vector<int> assign_folds(std::size_t n, int folds, std::uint64_t seed,
                                     const std::vector<std::size_t>& groups = {}) {
  std::vector<std::size_t> group_of(n);
  std::size_t n_groups = n;
  if (groups.empty()) {
    std::iota(group_of.begin(), group_of.end(), std::size_t{0});
  } else {
    group_of = groups;
    n_groups = groups.empty() ? 0 : *std::max_element(groups.begin(), groups.end()) + 1;
  }
  std::vector<std::size_t> order(n_groups);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> group_fold(n_groups);
  for (std::size_t k = 0; k < n_groups; ++k) group_fold[order[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));
  std::vector<int> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[i] = group_fold[group_of[i]];
  return fold;
}

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& M, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), M.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = M.row(rows[k]);
  return out;
}

inline Eigen::VectorXd take_rows(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[rows[k]];
  return out;
}

// ---------------------------------------------------------------------------
// Fitted model

struct HalModel {
  BasisMap basis;
  Family family = Family::gaussian;
  double intercept = 0.0;
  /// Nonzero coefficients as (basis column, value), ascending by column.
  std::vector<std::pair<Eigen::Index, double>> beta;
  double lambda_selected = 0.0;
  double l1_norm = 0.0;
  std::vector<std::pair<double, double>> cv_curve;
  std::vector<std::string> warnings;

  Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& X) const {
    if (X.cols() != basis.n_covariates) {
      throw FitError("HAL predict: expected " + std::to_string(basis.n_covariates) + " covariates, got " +
                     std::to_string(X.cols()));
    }
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(X.rows(), intercept);
    for (const auto& [j, b] : beta) {
      for (Eigen::Index i = 0; i < X.rows(); ++i) {
        if (basis.evaluate(static_cast<std::size_t>(j), X, i) != 0.0) eta[i] += b;
      }
    }
    return eta;
  }

  /// Response scale; binomial predictions clamped to [1e-6, 1 - 1e-6].
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd eta = linear_predictor(X);
    if (family == Family::binomial) {
      for (auto& e : eta) e = clamp_prob(expit(e));
    }
    return eta;
  }

  std::size_t nonzero_count() const { return beta.size(); }
};

namespace detail {

inline HalModel make_model(const BasisMap& basis, Family family, double b0, const Eigen::VectorXd& beta,
                           double lambda) {
  HalModel m;
  m.basis = basis;
  m.family = family;
  m.intercept = b0;
  m.lambda_selected = lambda;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    if (beta[j] != 0.0) {
      m.beta.emplace_back(j, beta[j]);
      m.l1_norm += std::abs(beta[j]);
    }
  }
  return m;
}

}  // namespace detail

/// Cross-validated risk of every lambda on the grid, accumulated over folds
/// in fold order: sum over held-out rows of w_i * loss_i, divided by sum(w).
inline std::vector<double> cv_risk(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                   Family family, std::span<const double> lambdas, const std::vector<int>& fold,
                                   int n_folds, const HalConfig& cfg) {
  std::vector<double> risk(lambdas.size(), 0.0);
  for (int f = 0; f < n_folds; ++f) {
    std::vector<Eigen::Index> train, held;
    for (std::size_t i = 0; i < fold.size(); ++i) {
      (fold[i] == f ? held : train).push_back(static_cast<Eigen::Index>(i));
    }
    if (held.empty() || train.empty()) continue;
    const Eigen::VectorXd wt = take_rows(w, train);
    if (!(wt.sum() > 0.0)) continue;
    const LassoPath path = lasso_path(take_rows(Z, train), take_rows(y, train), wt, family, lambdas, cfg);
    const Eigen::MatrixXd Zh = take_rows(Z, held);
    const Eigen::MatrixXd eta = (Zh * path.betas).rowwise() +
                                Eigen::Map<const Eigen::RowVectorXd>(path.intercepts.data(),
                                                                     static_cast<Eigen::Index>(path.intercepts.size()));
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
      double s = 0.0;
      for (std::size_t h = 0; h < held.size(); ++h) {
        const auto i = held[h];
        s += w[i] * detail::pointwise_loss(family, y[i], eta(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(k)));
      }
      risk[k] += s;
    }
  }
  const double wsum = w.sum();
  for (auto& r : risk) r /= wsum;
  return risk;
}

/// Highly adaptive lasso with a cross-validated penalty.
///
/// The loss is weight-normalized, (1/sum w) sum_i w_i loss_i + lambda |beta|_1,
/// so rescaling all weights leaves the fit unchanged and a row of weight 2
/// behaves exactly like two copies of weight 1. The intercept is unpenalized.
/// With a single-lambda grid (or cv_folds < 2) cross-validation is skipped.
inline HalModel fit_hal(const BasisMap& basis, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& w, Family family, const HalConfig& cfg) {
  const Eigen::Index n = X.rows();
  if (y.size() != n || w.size() != n) throw FitError("fit_hal: dimension mismatch");
  if ((w.array() < 0.0).any()) throw FitError("fit_hal: negative weight");
  if (!(w.sum() > 0.0)) throw FitError("fit_hal: all weights are zero");
  if (family == Family::binomial) {
    if ((y.array() < 0.0).any() || (y.array() > 1.0).any()) throw FitError("fit_hal: binomial y outside [0,1]");
    double lo = 1.0, hi = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] > 0.0) {
        lo = std::min(lo, y[i]);
        hi = std::max(hi, y[i]);
      }
    }
    if (!(hi > lo)) throw FitError("fit_hal: binomial outcome needs at least two distinct values");
  }
  const Eigen::MatrixXd Z = basis.design(X);
  const double b_null = detail::null_intercept(y, w, family);
  if (Z.cols() == 0) {
    HalModel m = detail::make_model(basis, family, b_null, Eigen::VectorXd(), 0.0);
    m.warnings.emplace_back("empty basis: intercept-only model");
    return m;
  }
  std::vector<double> grid = default_lambda_grid(Z, y, w, cfg);
  if (grid.empty()) {
    HalModel m = detail::make_model(basis, family, b_null, Eigen::VectorXd::Zero(Z.cols()), 0.0);
    m.warnings.emplace_back("no basis column correlates with the outcome: intercept-only model");
    return m;
  }
  std::size_t selected = 0;
  std::vector<std::pair<double, double>> curve;
  if (grid.size() > 1 && cfg.cv_folds >= 2) {
    const auto fold = assign_folds(static_cast<std::size_t>(n), cfg.cv_folds, cfg.seed);
    const auto risk = cv_risk(Z, y, w, family, grid, fold, cfg.cv_folds, cfg);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      curve.emplace_back(grid[k], risk[k]);
      if (risk[k] < risk[selected]) selected = k;
    }
  }
  const std::span<const double> upto(grid.data(), selected + 1);
  const LassoPath path = lasso_path(Z, y, w, family, upto, cfg);
  HalModel m = detail::make_model(basis, family, path.intercepts.back(), path.betas.col(path.betas.cols() - 1),
                                  grid[selected]);
  m.cv_curve = std::move(curve);
  return m;
}

inline HalModel fit_hal(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                        Family family, const HalConfig& cfg) {
  return fit_hal(build_basis(X, cfg.max_degree, cfg.max_knots_per_dim), X, y, w, family, cfg);
}

inline Eigen::VectorXd predict_hal(const HalModel& model, const Eigen::MatrixXd& X) { return model.predict(X); }

/// Largest KKT violation max_j (|grad_j| - lambda)_+ for zero coefficients and
/// |grad_j - lambda sign(beta_j)| for nonzero ones, on the training data.
inline double kkt_violation(const HalModel& model, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& w) {
  const Eigen::MatrixXd Z = model.basis.design(X);
  const Eigen::VectorXd fitted = model.family == Family::gaussian
                                     ? model.linear_predictor(X)
                                     : Eigen::VectorXd(model.linear_predictor(X).unaryExpr([](double e) { return expit(e); }));
  const Eigen::VectorXd grad = Z.transpose() * (w.array() * (y - fitted).array()).matrix() / w.sum();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(Z.cols());
  for (const auto& [j, b] : model.beta) beta[j] = b;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < Z.cols(); ++j) {
    if (beta[j] == 0.0) {
      worst = std::max(worst, std::abs(grad[j]) - model.lambda_selected);
    } else {
      worst = std::max(worst, std::abs(grad[j] - model.lambda_selected * (beta[j] > 0 ? 1.0 : -1.0)));
    }
  }
  return worst;
}

}  // namespace tpshift

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tpshift/errors.hpp"
#include "tpshift/stats.hpp"

namespace tpshift {

enum class Family { gaussian, binomial };

inline const char* to_string(Family f) { return f == Family::gaussian ? "gaussian" : "binomial"; }

struct GlmFit {
  Eigen::VectorXd coefficients;
  Family family = Family::gaussian;
  bool converged = true;
  int iterations = 0;
  bool offset_used = false;
  std::vector<std::string> warnings;
};

struct WlsResult {
  GlmFit fit;
  double residual_variance = 0.0;
};

/// Weighted least squares. Rows with zero weight do not enter the fit.
inline WlsResult fit_wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  const Eigen::Index n = X.rows();
  if (y.size() != n || w.size() != n) throw FitError("fit_wls: dimension mismatch");
  if ((w.array() < 0.0).any()) throw FitError("fit_wls: negative weight");
  const double wsum = w.sum();
  if (!(wsum > 0.0)) throw FitError("fit_wls: weights sum to zero");

  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w[i] > 0.0) keep.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd Xw(m, X.cols());
  Eigen::VectorXd yw(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double s = std::sqrt(w[keep[static_cast<std::size_t>(k)]]);
    Xw.row(k) = s * X.row(keep[static_cast<std::size_t>(k)]);
    yw[k] = s * y[keep[static_cast<std::size_t>(k)]];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols()) {
    std::string cols;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < X.cols(); ++k) {
      if (!cols.empty()) cols += ", ";
      cols += std::to_string(perm[k]);
    }
    throw FitError("fit_wls: design is rank deficient; collinear column(s): " + cols);
  }
  WlsResult out;
  out.fit.coefficients = qr.solve(yw);
  out.fit.family = Family::gaussian;
  out.fit.iterations = 1;
  const Eigen::VectorXd resid = y - X * out.fit.coefficients;
  out.residual_variance = w.dot(resid.cwiseAbs2()) / wsum;
  return out;
}

struct LogisticOptions {
  int max_iter = 100;
  /// Convergence when max |score| / sum(w) falls below this.
  double tol = 1e-8;
  /// Any |coefficient| beyond this is treated as separation.
  double separation_bound = 30.0;
};

namespace detail {

inline double logistic_loss(const Eigen::VectorXd& eta, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (w[i] == 0.0) continue;
    s += w[i] * (log1p_exp(eta[i]) - y[i] * eta[i]);
  }
  return s;
}

}  // namespace detail

/// Weighted logistic regression by IRLS with step halving.
///
/// `y` may be fractional in [0,1]. `offset` may be empty (treated as 0). The
/// design is used as given; add an intercept column if one is wanted.
inline GlmFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                           const Eigen::VectorXd& offset = {}, const LogisticOptions& opts = {}) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (y.size() != n || w.size() != n) throw FitError("fit_logistic: dimension mismatch");
  if (offset.size() != 0 && offset.size() != n) throw FitError("fit_logistic: offset length mismatch");
  if ((w.array() < 0.0).any()) throw FitError("fit_logistic: negative weight");
  if ((y.array() < 0.0).any() || (y.array() > 1.0).any()) throw FitError("fit_logistic: y outside [0,1]");
  const double wsum = w.sum();
  if (!(wsum > 0.0)) throw FitError("fit_logistic: weights sum to zero");

  GlmFit fit;
  fit.family = Family::binomial;
  fit.offset_used = offset.size() != 0;
  fit.coefficients = Eigen::VectorXd::Zero(p);
  fit.converged = false;
  const Eigen::VectorXd off = fit.offset_used ? offset : Eigen::VectorXd::Zero(n);
  if (p == 0) {
    fit.converged = true;
    return fit;
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = off;
  double loss = detail::logistic_loss(eta, y, w);
  for (int it = 0; it < opts.max_iter; ++it) {
    fit.iterations = it + 1;
    Eigen::VectorXd mu(n), hw(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = expit(eta[i]);
      hw[i] = w[i] * mu[i] * (1.0 - mu[i]);
    }
    const Eigen::VectorXd score = X.transpose() * (w.array() * (y - mu).array()).matrix();
    if (score.cwiseAbs().maxCoeff() / wsum < opts.tol) {
      fit.converged = true;
      break;
    }
    const Eigen::MatrixXd info = X.transpose() * hw.asDiagonal() * X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::VectorXd step;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      step = ldlt.solve(score);
    } else {
      // Information nearly singular: fitted probabilities saturate at 0/1.
      step = info.completeOrthogonalDecomposition().solve(score);
    }
    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    Eigen::VectorXd next_eta = off + X * next;
    double next_loss = detail::logistic_loss(next_eta, y, w);
    for (int h = 0; h < 30 && !(next_loss <= loss + 1e-12 * std::abs(loss)); ++h) {
      scale *= 0.5;
      next = beta + scale * step;
      next_eta = off + X * next;
      next_loss = detail::logistic_loss(next_eta, y, w);
    }
    beta = next;
    eta = next_eta;
    loss = next_loss;
    if (beta.cwiseAbs().maxCoeff() > opts.separation_bound) {
      beta = beta.cwiseMax(-opts.separation_bound).cwiseMin(opts.separation_bound);
      fit.warnings.emplace_back("separation detected: coefficients clamped to +/-" +
                                std::to_string(opts.separation_bound));
      fit.coefficients = beta;
      return fit;
    }
  }
  fit.coefficients = beta;
  if (!fit.converged) fit.warnings.emplace_back("IRLS reached max_iter without converging");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w[i] > 0.0 && std::abs(eta[i]) > 15.0) {
      fit.warnings.emplace_back("fitted probabilities numerically 0 or 1 occurred");
      break;
    }
  }
  return fit;
}

inline Eigen::VectorXd linear_predictor(const GlmFit& fit, const Eigen::MatrixXd& X,
                                        const Eigen::VectorXd& offset = {}) {
  if (X.cols() != fit.coefficients.size()) throw FitError("predict: design has wrong column count");
  Eigen::VectorXd eta = fit.coefficients.size() == 0 ? Eigen::VectorXd::Zero(X.rows()) : Eigen::VectorXd(X * fit.coefficients);
  if (offset.size() != 0) eta += offset;
  return eta;
}

/// Response-scale predictions; binomial values are clamped to [1e-6, 1 - 1e-6].
inline Eigen::VectorXd predict_response(const GlmFit& fit, const Eigen::MatrixXd& X,
                                        const Eigen::VectorXd& offset = {}) {
  Eigen::VectorXd eta = linear_predictor(fit, X, offset);
  if (fit.family == Family::binomial) {
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = clamp_prob(expit(eta[i]));
  }
  return eta;
}

}  // namespace tpshift

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tpshift/errors.hpp"
#include "tpshift/estimators.hpp"
#include "tpshift/stats.hpp"

namespace tpshift {

/// Row of the working-model basis at one shift value.
using MsmBasis = std::function<Eigen::RowVectorXd(double)>;

inline Eigen::RowVectorXd linear_msm_basis(double delta) {
  Eigen::RowVectorXd r(2);
  r << 1.0, delta;
  return r;
}

struct MsmFit {
  std::string model_form = "linear";
  std::vector<double> deltas;
  std::vector<double> psis;
  Eigen::VectorXd h;
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd se;
  Eigen::VectorXd ci_lo;
  Eigen::VectorXd ci_hi;
  Eigen::VectorXd p_value;
  /// Per-observation influence values of beta (n x dim(beta)).
  Eigen::MatrixXd influence;
  bool degenerate = false;
  std::vector<std::string> warnings;

  double predict(double delta, const MsmBasis& basis = linear_msm_basis) const { return basis(delta).dot(beta); }
};

/// Weighted least-squares projection of (delta_k, psi_k) onto m_beta(delta)
/// with delta-method inference: D_beta = D_psi H M (M' H M)^{-1} row-wise and
/// cov(beta) = cov(D_beta) / n.
inline MsmFit fit_msm(const std::vector<double>& deltas, const std::vector<double>& psis,
                      const Eigen::MatrixXd& eif_matrix, const Eigen::VectorXd& h, double alpha = 0.05,
                      const MsmBasis& basis = linear_msm_basis, std::string model_form = "linear") {
  const auto K = static_cast<Eigen::Index>(deltas.size());
  if (K == 0 || psis.size() != deltas.size()) throw ConfigError("fit_msm: deltas and psis must have equal, nonzero length");
  if (eif_matrix.cols() != K) throw ConfigError("fit_msm: influence matrix needs one column per delta");
  if (h.size() != K) throw ConfigError("fit_msm: weight vector needs one entry per delta");
  if ((h.array() < 0.0).any()) throw ConfigError("fit_msm: weights must be nonnegative");
  if (eif_matrix.rows() < 2) throw FitError("fit_msm: needs at least 2 observations");

  const Eigen::Index q = basis(deltas[0]).size();
  Eigen::MatrixXd M(K, q);
  for (Eigen::Index k = 0; k < K; ++k) M.row(k) = basis(deltas[static_cast<std::size_t>(k)]);
  const Eigen::MatrixXd A = M.transpose() * h.asDiagonal() * M;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (K < q || lu.rank() < q) throw FitError("fit_msm: singular normal equations (too few distinct deltas)");

  const Eigen::VectorXd psi = Eigen::Map<const Eigen::VectorXd>(psis.data(), K);
  // P maps psi to beta: beta = P psi.
  const Eigen::MatrixXd P = lu.solve(M.transpose() * h.asDiagonal());
  MsmFit fit;
  fit.model_form = std::move(model_form);
  fit.deltas = deltas;
  fit.psis = psis;
  fit.h = h;
  fit.beta = P * psi;
  fit.influence = eif_matrix * P.transpose();
  const double n = static_cast<double>(eif_matrix.rows());
  const Eigen::MatrixXd centered = fit.influence.rowwise() - fit.influence.colwise().mean();
  fit.covariance = (centered.transpose() * centered) / (n - 1.0) / n;
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose());
  fit.se = fit.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  const double z = normal_quantile(1.0 - alpha / 2.0);
  fit.ci_lo = fit.beta - z * fit.se;
  fit.ci_hi = fit.beta + z * fit.se;
  fit.p_value.resize(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    if (fit.se[j] > 0.0) {
      fit.p_value[j] = std::clamp(2.0 * normal_sf(std::abs(fit.beta[j]) / fit.se[j]), 0.0, 1.0);
    } else {
      fit.degenerate = true;
      fit.p_value[j] = fit.beta[j] == 0.0 ? 1.0 : 0.0;
    }
  }
  if (fit.degenerate) fit.warnings.emplace_back("zero variance for some coefficient: degenerate confidence interval");
  return fit;
}

enum class MsmWeighting { uniform, inverse_variance };

/// MSM over a grid of estimates from one estimator variant.
inline MsmFit fit_msm(const std::vector<EstimateResult>& results, MsmWeighting weighting = MsmWeighting::uniform,
                      double alpha = 0.05, const MsmBasis& basis = linear_msm_basis) {
  if (results.empty()) throw ConfigError("fit_msm: no estimates");
  const Variant v = results.front().variant;
  const Eigen::Index n = results.front().eif_values.size();
  std::vector<double> deltas, psis;
  Eigen::MatrixXd eif(n, static_cast<Eigen::Index>(results.size()));
  Eigen::VectorXd h(static_cast<Eigen::Index>(results.size()));
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& r = results[k];
    if (r.variant != v) throw ConfigError("fit_msm: estimates from different variants cannot be mixed");
    if (r.eif_values.size() != n) throw ConfigError("fit_msm: influence vectors differ in length");
    deltas.push_back(r.delta);
    psis.push_back(r.psi);
    eif.col(static_cast<Eigen::Index>(k)) = r.eif_values;
    if (weighting == MsmWeighting::uniform) {
      h[static_cast<Eigen::Index>(k)] = 1.0;
    } else {
      if (!(r.se > 0.0)) throw FitError("fit_msm: inverse-variance weights need positive standard errors");
      h[static_cast<Eigen::Index>(k)] = 1.0 / (r.se * r.se);
    }
  }
  return fit_msm(deltas, psis, eif, h, alpha, basis);
}

}  // namespace tpshift

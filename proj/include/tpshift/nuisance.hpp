#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tpshift/data.hpp"
#include "tpshift/density.hpp"
#include "tpshift/errors.hpp"
#include "tpshift/glm.hpp"
#include "tpshift/hal.hpp"
#include "tpshift/rng.hpp"
#include "tpshift/stats.hpp"

namespace tpshift {

enum class LearnerMethod { glm, hal };
/// known_one: g_C = 1 for every row (complete sampling, or the naive analysis).
enum class SamplingMethod { logistic_glm, hal, known_one };
enum class DensityMethod { gaussian, haldensify };

inline const char* to_string(LearnerMethod m) { return m == LearnerMethod::glm ? "glm" : "hal"; }
inline const char* to_string(SamplingMethod m) {
  switch (m) {
    case SamplingMethod::logistic_glm: return "glm";
    case SamplingMethod::hal: return "hal";
    case SamplingMethod::known_one: return "known_one";
  }
  return "?";
}
inline const char* to_string(DensityMethod m) { return m == DensityMethod::gaussian ? "gaussian" : "haldensify"; }

inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out(X.rows(), X.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(X.cols()) = X;
  return out;
}

/// GLM (main terms plus intercept) or HAL regression behind one predict().
struct Regression {
  LearnerMethod method = LearnerMethod::glm;
  Family family = Family::gaussian;
  GlmFit glm;
  HalModel hal;

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const {
    if (method == LearnerMethod::hal) return hal.predict(X);
    return predict_response(glm, with_intercept(X));
  }

  std::vector<std::string> warnings() const { return method == LearnerMethod::hal ? hal.warnings : glm.warnings; }
};

inline Regression fit_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                 Family family, LearnerMethod method, const HalConfig& hal) {
  Regression r;
  r.method = method;
  r.family = family;
  if (method == LearnerMethod::hal) {
    r.hal = fit_hal(X, y, w, family, hal);
  } else if (family == Family::binomial) {
    r.glm = fit_logistic(with_intercept(X), y, w);
  } else {
    r.glm = fit_wls(with_intercept(X), y, w).fit;
  }
  return r;
}

/// (Y, W) with Y as the first column.
inline Eigen::MatrixXd outcome_covariates(const Eigen::VectorXd& y, const Eigen::MatrixXd& W) {
  Eigen::MatrixXd X(W.rows(), W.cols() + 1);
  X.col(0) = y;
  X.rightCols(W.cols()) = W;
  return X;
}

/// (A, W) with A as the first column.
inline Eigen::MatrixXd exposure_covariates(const Eigen::VectorXd& a, const Eigen::MatrixXd& W) {
  return outcome_covariates(a, W);
}

// ---------------------------------------------------------------------------
// Sampling mechanism g_C(y, w) = P(C = 1 | Y = y, W = w)

struct SamplingModel {
  SamplingMethod method = SamplingMethod::known_one;
  double zeta = 0.01;
  std::optional<Regression> fit;

  /// Predictions clamped to [zeta, 1]; X holds (Y, W).
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const {
    if (!fit) return Eigen::VectorXd::Ones(X.rows());
    Eigen::VectorXd g = fit->predict(X);
    for (auto& v : g) v = std::clamp(v, zeta, 1.0);
    return g;
  }
};

inline SamplingModel fit_sampling_mechanism(const ObservedDataset& data, SamplingMethod method, double zeta,
                                            const HalConfig& hal = {}) {
  if (!(zeta > 0.0 && zeta < 0.5)) throw ConfigError("sampling truncation zeta must lie in (0, 0.5)");
  SamplingModel m;
  m.method = method;
  m.zeta = zeta;
  if (method == SamplingMethod::known_one) return m;
  const auto& c = data.sampled();
  if (c.minCoeff() == c.maxCoeff()) {
    throw FitError("sampling mechanism: C takes a single value; both phases must be present");
  }
  const Eigen::MatrixXd X = outcome_covariates(data.outcome(), data.covariates());
  m.fit = fit_regression(X, c, Eigen::VectorXd::Ones(X.rows()), Family::binomial,
                         method == SamplingMethod::hal ? LearnerMethod::hal : LearnerMethod::glm, hal);
  return m;
}

/// Stabilized inverse-probability weights (C_i / g_i) / sum_j (C_j / g_j).
inline Eigen::VectorXd joint_distribution_weights(const Eigen::VectorXd& c, const Eigen::VectorXd& g) {
  Eigen::VectorXd w = c.array() / g.array();
  return w / w.sum();
}

/// Logistic or HAL regression of Y on (A, W) over C = 1 rows, weights 1/g.
/// `g` holds one value per C = 1 row, in phase2_rows() order.
inline Regression fit_outcome_regression(const ObservedDataset& data, const Eigen::VectorXd& g_phase2,
                                         LearnerMethod method, const HalConfig& hal = {}) {
  const auto& rows = data.phase2_rows();
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) y[static_cast<Eigen::Index>(k)] = data.outcome(rows[k]);
  if (y.minCoeff() == y.maxCoeff()) throw FitError("outcome regression: degenerate Y among second-phase rows");
  const Eigen::MatrixXd X = exposure_covariates(data.phase2_exposure(), data.phase2_covariates());
  const Eigen::VectorXd w = g_phase2.cwiseInverse();
  return fit_regression(X, y, w, Family::binomial, method, hal);
}

/// H(a, w) = 1{a < u} q(a - delta | w) / max(q(a | w), floor) + 1{a + delta >= u}.
inline double auxiliary_covariate(double a, double delta, double u, double q_shifted_back, double q_at,
                                  double floor = 1e-3) {
  double h = 0.0;
  if (a < u) h += q_shifted_back / std::max(q_at, floor);
  if (a + delta >= u) h += 1.0;
  return h;
}

/// D^F = H (Y - Qbar(A, W)) + Qbar(d(A, W), W) - psi.
inline Eigen::VectorXd pseudo_outcomes(const Eigen::VectorXd& y, const Eigen::VectorXd& q_obs,
                                       const Eigen::VectorXd& q_shift, const Eigen::VectorXd& h, double psi) {
  return (h.array() * (y - q_obs).array() + q_shift.array() - psi).matrix();
}

/// Unweighted regression of D^F on (Y, W) among C = 1 rows.
inline Regression fit_eif_projection(const Eigen::MatrixXd& yw_phase2, const Eigen::VectorXd& pseudo,
                                     LearnerMethod method, const HalConfig& hal = {}) {
  if (yw_phase2.rows() < 2) throw FitError("EIF projection needs at least 2 second-phase rows");
  if (!pseudo.allFinite()) throw FitError("EIF projection: non-finite pseudo-outcomes");
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(pseudo.size());
  if (method == LearnerMethod::glm) {
    // Drop constant covariate columns so the design stays full rank on small samples.
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < yw_phase2.cols(); ++j) {
      if (yw_phase2.col(j).maxCoeff() > yw_phase2.col(j).minCoeff()) keep.push_back(j);
    }
    if (static_cast<Eigen::Index>(keep.size()) < yw_phase2.cols()) {
      Regression r;
      r.family = Family::gaussian;
      const Eigen::MatrixXd Xk = yw_phase2(Eigen::all, keep);
      const GlmFit sub = fit_wls(with_intercept(Xk), pseudo, w).fit;
      r.glm = sub;
      r.glm.coefficients = Eigen::VectorXd::Zero(yw_phase2.cols() + 1);
      r.glm.coefficients[0] = sub.coefficients[0];
      for (std::size_t k = 0; k < keep.size(); ++k) r.glm.coefficients[keep[k] + 1] = sub.coefficients[static_cast<Eigen::Index>(k) + 1];
      return r;
    }
  }
  return fit_regression(yw_phase2, pseudo, w, Family::gaussian, method, hal);
}

// ---------------------------------------------------------------------------
// Bundled nuisance fits

struct NuisanceConfig {
  SamplingMethod g_method = SamplingMethod::logistic_glm;
  double zeta = 0.01;
  LearnerMethod q_method = LearnerMethod::glm;
  DensityMethod density_method = DensityMethod::gaussian;
  LinearBasis density_basis = LinearBasis::all();
  HaldensifyConfig haldensify;
  LearnerMethod eif_method = LearnerMethod::glm;
  HalConfig hal;
  double density_floor = 1e-3;
  std::uint64_t seed = 1;
};

/// Fits that do not depend on the shift: g_C, Qbar_Y, q_A and the Q_AW weights.
struct InitialNuisance {
  SamplingModel g_model;
  Eigen::VectorXd g;          // g_C(Y_i, W_i), every row
  Regression outcome;
  DensityModel density;
  Eigen::VectorXd q_aw;       // stabilized weights, every row
};

inline InitialNuisance fit_initial_nuisance(const ObservedDataset& data, const NuisanceConfig& cfg) {
  InitialNuisance out;
  HalConfig hal_g = cfg.hal;
  hal_g.seed = derive_seed(cfg.seed, {1});
  out.g_model = fit_sampling_mechanism(data, cfg.g_method, cfg.zeta, hal_g);
  out.g = out.g_model.predict(outcome_covariates(data.outcome(), data.covariates()));
  out.q_aw = joint_distribution_weights(data.sampled(), out.g);

  const auto& rows = data.phase2_rows();
  Eigen::VectorXd g2(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) g2[static_cast<Eigen::Index>(k)] = out.g[static_cast<Eigen::Index>(rows[k])];

  HalConfig hal_q = cfg.hal;
  hal_q.seed = derive_seed(cfg.seed, {2});
  out.outcome = fit_outcome_regression(data, g2, cfg.q_method, hal_q);

  const Eigen::VectorXd a = data.phase2_exposure();
  const Eigen::MatrixXd W = data.phase2_covariates();
  const Eigen::VectorXd w = g2.cwiseInverse();
  if (cfg.density_method == DensityMethod::gaussian) {
    out.density = fit_gaussian_density(a, W, w, cfg.density_basis);
  } else {
    HaldensifyConfig hd = cfg.haldensify;
    hd.seed = derive_seed(cfg.seed, {3});
    hd.hal.seed = derive_seed(cfg.seed, {4});
    out.density = fit_haldensify(a, W, w, hd);
  }
  return out;
}

/// Shift-specific quantities over the C = 1 rows (in phase2_rows() order),
/// plus G over every row.
struct NuisanceSet {
  const ObservedDataset* data = nullptr;
  const InitialNuisance* initial = nullptr;
  ShiftSpec spec;
  SupportBound bound = SupportBound::unbounded();

  Eigen::VectorXd a;            // observed exposure
  Eigen::VectorXd a_shift;      // d(A, W)
  Eigen::VectorXd y;
  Eigen::VectorXd g2;           // g_C on C = 1 rows
  Eigen::VectorXd q_obs;        // Qbar(A, W)
  Eigen::VectorXd q_shift;      // Qbar(d(A, W), W)
  Eigen::VectorXd h_obs;        // H(A, W)
  Eigen::VectorXd h_shift;      // H(d(A, W), W)
  double psi_plugin = 0.0;
  Eigen::VectorXd pseudo;       // D^F
  std::optional<Regression> eif_projection;
  Eigen::VectorXd G;            // G(Y_i, W_i), every row; zero when not fitted
  int floored_density = 0;      // rows where the H denominator hit the floor
  int bound_active = 0;         // rows where the shift was blocked by u(w)
};

namespace detail {

inline double plugin_value(const Eigen::VectorXd& q_aw, const std::vector<std::size_t>& rows,
                           const Eigen::VectorXd& q_shift) {
  double psi = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) psi += q_aw[static_cast<Eigen::Index>(rows[k])] * q_shift[static_cast<Eigen::Index>(k)];
  return psi;
}

}  // namespace detail

inline NuisanceSet complete_nuisance(const ObservedDataset& data, const InitialNuisance& init, const ShiftSpec& spec,
                                     const NuisanceConfig& cfg, bool fit_projection = true) {
  spec.check();
  NuisanceSet s;
  s.data = &data;
  s.initial = &init;
  s.spec = spec;
  s.bound = spec.support_mode == SupportMode::density_threshold
                ? support_bound_from_density(init.density, spec.density_eps)
                : estimate_support_bound(data, spec);

  const auto& rows = data.phase2_rows();
  const auto m = static_cast<Eigen::Index>(rows.size());
  const Eigen::MatrixXd W = data.phase2_covariates();
  s.a = data.phase2_exposure();
  s.y.resize(m);
  s.g2.resize(m);
  s.a_shift.resize(m);
  Eigen::VectorXd u(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = rows[static_cast<std::size_t>(k)];
    s.y[k] = data.outcome(i);
    s.g2[k] = init.g[static_cast<Eigen::Index>(i)];
    u[k] = s.bound.at(W.row(k));
    s.a_shift[k] = s.a[k] + spec.delta <= u[k] ? s.a[k] + spec.delta : s.a[k];
    if (s.a_shift[k] == s.a[k] && spec.delta != 0.0) ++s.bound_active;
  }
  s.q_obs = init.outcome.predict(exposure_covariates(s.a, W));
  s.q_shift = init.outcome.predict(exposure_covariates(s.a_shift, W));

  const DensityTable q(init.density, W);
  s.h_obs.resize(m);
  s.h_shift.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double den = q.at(k, s.a[k]);
    if (s.a[k] < u[k] && den < cfg.density_floor) ++s.floored_density;
    s.h_obs[k] = auxiliary_covariate(s.a[k], spec.delta, u[k], q.at(k, s.a[k] - spec.delta), den, cfg.density_floor);
    const double as = s.a_shift[k];
    s.h_shift[k] = auxiliary_covariate(as, spec.delta, u[k], q.at(k, as - spec.delta), q.at(k, as), cfg.density_floor);
  }

  s.psi_plugin = detail::plugin_value(init.q_aw, rows, s.q_shift);
  s.pseudo = pseudo_outcomes(s.y, s.q_obs, s.q_shift, s.h_obs, s.psi_plugin);
  s.G = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.size()));
  if (fit_projection) {
    HalConfig hal_G = cfg.hal;
    hal_G.seed = derive_seed(cfg.seed, {5});
    s.eif_projection = fit_eif_projection(outcome_covariates(s.y, W), s.pseudo, cfg.eif_method, hal_G);
    s.G = s.eif_projection->predict(outcome_covariates(data.outcome(), data.covariates()));
  }
  return s;
}

}  // namespace tpshift

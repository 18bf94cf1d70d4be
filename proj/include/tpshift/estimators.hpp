#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tpshift/data.hpp"
#include "tpshift/errors.hpp"
#include "tpshift/glm.hpp"
#include "tpshift/nuisance.hpp"
#include "tpshift/stats.hpp"

namespace tpshift {

enum class Variant { plugin, onestep, tmle, onestep_reweighted, tmle_reweighted, onestep_naive, tmle_naive };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::plugin: return "plugin";
    case Variant::onestep: return "onestep";
    case Variant::tmle: return "tmle";
    case Variant::onestep_reweighted: return "onestep_reweighted";
    case Variant::tmle_reweighted: return "tmle_reweighted";
    case Variant::onestep_naive: return "onestep_naive";
    case Variant::tmle_naive: return "tmle_naive";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : {Variant::plugin, Variant::onestep, Variant::tmle, Variant::onestep_reweighted,
                 Variant::tmle_reweighted, Variant::onestep_naive, Variant::tmle_naive}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown estimator variant '" + std::string(s) + "'");
}

inline bool is_naive(Variant v) { return v == Variant::onestep_naive || v == Variant::tmle_naive; }
inline bool is_reweighted(Variant v) { return v == Variant::onestep_reweighted || v == Variant::tmle_reweighted; }
inline bool is_tmle(Variant v) { return v == Variant::tmle || v == Variant::tmle_reweighted || v == Variant::tmle_naive; }

struct TiltDiagnostics {
  double xi = 0.0;
  double epsilon = 0.0;
  double score_C = 0.0;
  double score_Y = 0.0;
  int sampling_iterations = 0;
  int outcome_iterations = 0;
  bool sampling_converged = true;
  bool outcome_converged = true;
};

struct EstimateResult {
  Variant variant = Variant::plugin;
  double delta = 0.0;
  double psi = 0.0;
  double psi_plugin = 0.0;
  Eigen::VectorXd eif_values;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_value = 1.0;
  TiltDiagnostics tilt;
  int floored_density = 0;
  int bound_active = 0;
  std::vector<std::string> warnings;
};

struct WaldResult {
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_value = 1.0;
  bool degenerate = false;
};

/// se = sd(eif) / sqrt(n) with the n - 1 variance denominator;
/// p = 2 (1 - Phi(sqrt(n) |psi| / sd)).
inline WaldResult wald_inference(double psi, const Eigen::VectorXd& eif, double alpha = 0.05) {
  if (eif.size() < 2) throw FitError("wald_inference needs at least 2 influence values");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
  const double n = static_cast<double>(eif.size());
  const double sd = std::sqrt(sample_variance(eif));
  WaldResult r;
  r.se = sd / std::sqrt(n);
  const double z = normal_quantile(1.0 - alpha / 2.0);
  r.ci_lo = psi - z * r.se;
  r.ci_hi = psi + z * r.se;
  if (!(sd > 0.0)) {
    r.degenerate = true;
    r.p_value = psi == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.p_value = std::clamp(2.0 * normal_sf(std::sqrt(n) * std::abs(psi) / sd), 0.0, 1.0);
  return r;
}

/// psi = sum_i Q_AW_i Qbar(d(A_i, W_i), W_i).
inline double plugin(const NuisanceSet& s) { return s.psi_plugin; }

/// (c/g) D^F - (c/g - 1) G; `pseudo` is ignored when c = 0.
inline double eif_observed(int c, double g, double pseudo, double G) {
  if (c == 0) return G;
  return pseudo / g - (1.0 / g - 1.0) * G;
}

namespace detail {

inline Eigen::VectorXd augmented_eif(const ObservedDataset& data, const Eigen::VectorXd& g_all,
                                     const Eigen::VectorXd& pseudo, const Eigen::VectorXd& G) {
  Eigen::VectorXd eif = G;
  const auto& rows = data.phase2_rows();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(rows[k]);
    eif[i] = eif_observed(1, g_all[i], pseudo[static_cast<Eigen::Index>(k)], G[i]);
  }
  return eif;
}

inline Eigen::VectorXd reweighted_eif(const ObservedDataset& data, const Eigen::VectorXd& g_all,
                                      const Eigen::VectorXd& pseudo) {
  Eigen::VectorXd eif = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.size()));
  const auto& rows = data.phase2_rows();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(rows[k]);
    eif[i] = pseudo[static_cast<Eigen::Index>(k)] / g_all[i];
  }
  return eif;
}

inline void finish(EstimateResult& r, double alpha) {
  const WaldResult w = wald_inference(r.psi, r.eif_values, alpha);
  r.se = w.se;
  r.ci_lo = w.ci_lo;
  r.ci_hi = w.ci_hi;
  r.p_value = w.p_value;
  if (w.degenerate) r.warnings.emplace_back("zero influence-function variance: degenerate confidence interval");
}

inline EstimateResult start(const NuisanceSet& s, Variant v) {
  EstimateResult r;
  r.variant = v;
  r.delta = s.spec.delta;
  r.psi_plugin = s.psi_plugin;
  r.floored_density = s.floored_density;
  r.bound_active = s.bound_active;
  return r;
}

}  // namespace detail

/// One-step estimator. `reweighted` drops the G term from both the
/// correction and the influence values.
inline EstimateResult onestep(const NuisanceSet& s, bool reweighted, double alpha = 0.05) {
  const auto& data = *s.data;
  EstimateResult r = detail::start(s, reweighted ? Variant::onestep_reweighted : Variant::onestep);
  if (reweighted) {
    r.eif_values = detail::reweighted_eif(data, s.initial->g, s.pseudo);
  } else {
    r.eif_values = detail::augmented_eif(data, s.initial->g, s.pseudo, s.G);
  }
  r.psi = s.psi_plugin + r.eif_values.mean();
  detail::finish(r, alpha);
  return r;
}

struct SamplingTilt {
  Eigen::VectorXd g;  // targeted g*, every row
  double xi = 0.0;
  double score = 0.0;
  int iterations = 0;
  bool converged = true;
};

/// Logistic tilt of g_C along the covariate G/g with offset logit(g), repeated
/// until |sum_i (G_i/g*_i)(C_i - g*_i)| / n < tol. Clamped to [zeta, 1].
inline SamplingTilt tilt_sampling(const Eigen::VectorXd& c, const Eigen::VectorXd& g, const Eigen::VectorXd& G,
                                  double zeta, double tol = 1e-6, int max_iter = 10) {
  const Eigen::Index n = c.size();
  auto score_of = [&](const Eigen::VectorXd& gs) {
    return std::abs(((G.array() / gs.array()) * (c - gs).array()).sum()) / static_cast<double>(n);
  };
  SamplingTilt t;
  t.g = g;
  t.score = score_of(g);
  if (t.score < tol) return t;
  Eigen::VectorXd eta(n);
  for (Eigen::Index i = 0; i < n; ++i) eta[i] = logit(clamp_prob(g[i]));
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  t.converged = false;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd X = (G.array() / t.g.array()).matrix();
    const GlmFit fit = fit_logistic(X, c, ones, eta);
    const double xi = fit.coefficients[0];
    t.xi += xi;
    eta += xi * X.col(0);
    for (Eigen::Index i = 0; i < n; ++i) t.g[i] = std::clamp(expit(eta[i]), zeta, 1.0);
    t.iterations = it + 1;
    t.score = score_of(t.g);
    if (t.score < tol) {
      t.converged = true;
      break;
    }
  }
  return t;
}

struct OutcomeTilt {
  Eigen::VectorXd q_obs;    // Qbar*(A, W)
  Eigen::VectorXd q_shift;  // Qbar*(d(A, W), W)
  double epsilon = 0.0;
  double score = 0.0;
  int iterations = 0;
  bool converged = true;
};

/// Weighted logistic tilt of Qbar along H with offset logit(Qbar), over C = 1
/// rows with weights w = C/g*, until |sum_i w_i H_i (Y_i - Qbar*_i)| / n < tol.
/// The shifted predictions move along H evaluated at the shifted exposure.
inline OutcomeTilt tilt_outcome(const Eigen::VectorXd& y, const Eigen::VectorXd& q_obs,
                                const Eigen::VectorXd& q_shift, const Eigen::VectorXd& h_obs,
                                const Eigen::VectorXd& h_shift, const Eigen::VectorXd& weights, double n,
                                double tol = 1e-6, int max_iter = 10) {
  const Eigen::Index m = y.size();
  auto score_of = [&](const Eigen::VectorXd& q) {
    return std::abs((weights.array() * h_obs.array() * (y - q).array()).sum()) / n;
  };
  OutcomeTilt t;
  t.q_obs = q_obs;
  t.q_shift = q_shift;
  t.score = score_of(q_obs);
  if (t.score < tol) return t;
  Eigen::VectorXd eta(m), eta_s(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    eta[i] = logit(clamp_prob(q_obs[i]));
    eta_s[i] = logit(clamp_prob(q_shift[i]));
  }
  const Eigen::MatrixXd X = h_obs;
  t.converged = false;
  for (int it = 0; it < max_iter; ++it) {
    const GlmFit fit = fit_logistic(X, y, weights, eta);
    const double eps = fit.coefficients[0];
    t.epsilon += eps;
    eta += eps * h_obs;
    eta_s += eps * h_shift;
    t.q_obs = eta.unaryExpr([](double e) { return expit(e); });
    t.iterations = it + 1;
    t.score = score_of(t.q_obs);
    if (t.score < tol) {
      t.converged = true;
      break;
    }
  }
  t.q_shift = eta_s.unaryExpr([](double e) { return expit(e); });
  return t;
}

struct TmleOptions {
  /// Rebuild the Q_AW weights from the targeted g* (mean EIF exactly zero);
  /// false keeps the initial g in the final plug-in.
  bool weights_from_targeted_g = true;
  double score_tol = 1e-6;
  int max_iter = 10;
};

/// Targeted estimator. The augmented form tilts g_C, then Qbar; the
/// reweighted form tilts Qbar only and uses (C/g) D^F as influence values.
inline EstimateResult tmle(const NuisanceSet& s, bool reweighted, double alpha = 0.05, const TmleOptions& opts = {}) {
  const auto& data = *s.data;
  const auto& rows = data.phase2_rows();
  const auto n = static_cast<double>(data.size());
  EstimateResult r = detail::start(s, reweighted ? Variant::tmle_reweighted : Variant::tmle);

  Eigen::VectorXd g_star = s.initial->g;
  if (!reweighted) {
    const SamplingTilt st = tilt_sampling(data.sampled(), s.initial->g, s.G, s.initial->g_model.zeta,
                                          opts.score_tol, opts.max_iter);
    g_star = st.g;
    r.tilt.xi = st.xi;
    r.tilt.score_C = st.score;
    r.tilt.sampling_iterations = st.iterations;
    r.tilt.sampling_converged = st.converged;
    if (!st.converged) r.warnings.emplace_back("sampling tilt did not reach the score tolerance");
  }
  Eigen::VectorXd w2(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) w2[static_cast<Eigen::Index>(k)] = 1.0 / g_star[static_cast<Eigen::Index>(rows[k])];
  const OutcomeTilt ot = tilt_outcome(s.y, s.q_obs, s.q_shift, s.h_obs, s.h_shift, w2, n, opts.score_tol, opts.max_iter);
  r.tilt.epsilon = ot.epsilon;
  r.tilt.score_Y = ot.score;
  r.tilt.outcome_iterations = ot.iterations;
  r.tilt.outcome_converged = ot.converged;
  if (!ot.converged) r.warnings.emplace_back("outcome tilt did not reach the score tolerance");

  const Eigen::VectorXd q_aw = !reweighted && opts.weights_from_targeted_g
                                   ? joint_distribution_weights(data.sampled(), g_star)
                                   : s.initial->q_aw;
  r.psi = detail::plugin_value(q_aw, rows, ot.q_shift);
  const Eigen::VectorXd pseudo = pseudo_outcomes(s.y, ot.q_obs, ot.q_shift, s.h_obs, r.psi);
  r.eif_values = reweighted ? detail::reweighted_eif(data, g_star, pseudo)
                            : detail::augmented_eif(data, g_star, pseudo, s.G);
  detail::finish(r, alpha);
  return r;
}

inline EstimateResult plugin_result(const NuisanceSet& s, double alpha = 0.05) {
  // Inference for the plug-in borrows the augmented influence values.
  EstimateResult r = detail::start(s, Variant::plugin);
  r.psi = s.psi_plugin;
  r.eif_values = s.eif_projection ? detail::augmented_eif(*s.data, s.initial->g, s.pseudo, s.G)
                                  : detail::reweighted_eif(*s.data, s.initial->g, s.pseudo);
  detail::finish(r, alpha);
  return r;
}

// ---------------------------------------------------------------------------
// High-level driver

struct EstimateOptions {
  NuisanceConfig nuisance;
  SupportMode support_mode = SupportMode::empirical_max;
  double density_eps = 1e-3;
  double alpha = 0.05;
  TmleOptions tmle;
};

/// Nuisances fitted once per analysis (augmented/reweighted share them; the
/// naive analysis refits on the C = 1 rows with g = 1).
class Estimator {
 public:
  Estimator(ObservedDataset data, EstimateOptions opts) : data_(std::move(data)), opts_(std::move(opts)) {}

  EstimateResult run(double delta, Variant v) {
    const bool naive = is_naive(v);
    const ObservedDataset& d = naive ? naive_data() : data_;
    const InitialNuisance& init = naive ? naive_initial() : initial();
    // With g = 1 on every row the G term drops out, so the naive analysis skips it.
    const bool needs_G = !naive && !is_reweighted(v);
    const ShiftSpec spec{delta, opts_.support_mode, opts_.density_eps};
    const NuisanceSet s = complete_nuisance(d, init, spec, opts_.nuisance, needs_G);
    EstimateResult r;
    switch (v) {
      case Variant::plugin: r = plugin_result(s, opts_.alpha); break;
      case Variant::onestep: r = onestep(s, false, opts_.alpha); break;
      case Variant::onestep_reweighted: r = onestep(s, true, opts_.alpha); break;
      case Variant::onestep_naive: r = onestep(s, false, opts_.alpha); break;
      case Variant::tmle: r = tmle(s, false, opts_.alpha, opts_.tmle); break;
      case Variant::tmle_reweighted: r = tmle(s, true, opts_.alpha, opts_.tmle); break;
      case Variant::tmle_naive: r = tmle(s, false, opts_.alpha, opts_.tmle); break;
    }
    r.variant = v;
    for (const auto& w : init.outcome.warnings()) r.warnings.push_back("outcome regression: " + w);
    if (init.g_model.fit) {
      for (const auto& w : init.g_model.fit->warnings()) r.warnings.push_back("sampling mechanism: " + w);
    }
    if (s.floored_density > 0) {
      r.warnings.push_back(std::to_string(s.floored_density) + " row(s) hit the density-ratio floor");
    }
    return r;
  }

  const InitialNuisance& initial() {
    if (!initial_) initial_ = fit_initial_nuisance(data_, opts_.nuisance);
    return *initial_;
  }

 private:
  const ObservedDataset& naive_data() {
    if (!naive_data_) naive_data_ = data_.phase2_subset();
    return *naive_data_;
  }
  const InitialNuisance& naive_initial() {
    if (!naive_initial_) {
      NuisanceConfig cfg = opts_.nuisance;
      cfg.g_method = SamplingMethod::known_one;
      naive_initial_ = fit_initial_nuisance(naive_data(), cfg);
    }
    return *naive_initial_;
  }

  ObservedDataset data_;
  EstimateOptions opts_;
  std::optional<InitialNuisance> initial_;
  std::optional<ObservedDataset> naive_data_;
  std::optional<InitialNuisance> naive_initial_;
};

inline std::vector<EstimateResult> estimate(const ObservedDataset& data, const std::vector<double>& deltas,
                                            const std::vector<Variant>& variants, const EstimateOptions& opts) {
  Estimator est(data, opts);
  std::vector<EstimateResult> out;
  for (double d : deltas) {
    for (auto v : variants) out.push_back(est.run(d, v));
  }
  return out;
}

}  // namespace tpshift

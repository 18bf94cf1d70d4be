#pragma once

#include <cstdint>
#include <fstream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tpshift/density.hpp"
#include "tpshift/errors.hpp"
#include "tpshift/estimators.hpp"
#include "tpshift/format.hpp"
#include "tpshift/hal.hpp"
#include "tpshift/msm.hpp"
#include "tpshift/sim.hpp"

namespace tpshift {

using json = nlohmann::json;

namespace detail {

inline std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

inline Family parse_family(const std::string& s) {
  if (s == "gaussian") return Family::gaussian;
  if (s == "binomial") return Family::binomial;
  throw DataError("unknown family '" + s + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// HAL model

inline json hal_to_json(const HalModel& m) {
  json terms = json::array();
  for (const auto& t : m.basis.terms) terms.push_back({{"covariates", t.covariates}, {"knots", t.knots}});
  json beta = json::array();
  for (const auto& [j, b] : m.beta) beta.push_back({{"column", j}, {"value", b}});
  json curve = json::array();
  for (const auto& [l, r] : m.cv_curve) curve.push_back({l, r});
  return {{"family", to_string(m.family)},
          {"n_covariates", m.basis.n_covariates},
          {"knots", m.basis.knots},
          {"interactions", m.basis.interactions},
          {"terms", terms},
          {"intercept", m.intercept},
          {"beta", beta},
          {"lambda_selected", m.lambda_selected},
          {"l1_norm", m.l1_norm},
          {"cv_curve", curve},
          {"warnings", m.warnings}};
}

inline HalModel hal_from_json(const json& j) {
  HalModel m;
  m.family = detail::parse_family(j.at("family").get<std::string>());
  m.basis.n_covariates = j.at("n_covariates").get<int>();
  m.basis.knots = j.at("knots").get<std::vector<std::vector<double>>>();
  m.basis.interactions = j.at("interactions").get<std::vector<std::vector<int>>>();
  for (const auto& t : j.at("terms")) {
    BasisTerm term{t.at("covariates").get<std::vector<int>>(), t.at("knots").get<std::vector<double>>()};
    if (term.covariates.size() != term.knots.size()) throw DataError("HAL model: malformed basis term");
    for (int c : term.covariates) {
      if (c < 0 || c >= m.basis.n_covariates) throw DataError("HAL model: basis term covariate out of range");
    }
    m.basis.terms.push_back(std::move(term));
  }
  m.intercept = j.at("intercept").get<double>();
  for (const auto& b : j.at("beta")) {
    const auto col = b.at("column").get<Eigen::Index>();
    if (col < 0 || col >= m.basis.size()) throw DataError("HAL model: coefficient column out of range");
    m.beta.emplace_back(col, b.at("value").get<double>());
  }
  m.lambda_selected = j.at("lambda_selected").get<double>();
  m.l1_norm = j.at("l1_norm").get<double>();
  for (const auto& p : detail::get_or(j, "cv_curve", json::array())) m.cv_curve.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  m.warnings = detail::get_or(j, "warnings", std::vector<std::string>{});
  return m;
}

// ---------------------------------------------------------------------------
// Density models

inline json density_to_json(const DensityModel& model, const std::vector<std::string>& covariate_names) {
  if (const auto* g = std::get_if<GaussianDensityModel>(&model)) {
    return {{"kind", "gaussian"},
            {"covariate_names", covariate_names},
            {"basis", {{"intercept", g->basis.intercept}, {"all_columns", g->basis.all_columns}, {"columns", g->basis.columns}}},
            {"coefficients", detail::to_vec(g->mean_fit.coefficients)},
            {"sigma2", g->sigma2}};
  }
  const auto& c = std::get<CondDensityModel>(model);
  json sel = json::array();
  for (const auto& s : c.selection) sel.push_back({{"n_bins", s.n_bins}, {"lambda", s.lambda}, {"cv_risk", s.cv_risk}});
  return {{"kind", "haldensify"},
          {"covariate_names", covariate_names},
          {"bin_edges", c.bin_edges},
          {"n_bins_selected", c.n_bins_selected},
          {"hazard_model", hal_to_json(c.hazard_model)},
          {"selection", sel},
          {"warnings", c.warnings}};
}

struct DensityDocument {
  DensityModel model;
  std::vector<std::string> covariate_names;
};

inline DensityDocument density_from_json(const json& j) {
  DensityDocument doc;
  doc.covariate_names = j.at("covariate_names").get<std::vector<std::string>>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "gaussian") {
    GaussianDensityModel g;
    const auto& b = j.at("basis");
    g.basis.intercept = b.at("intercept").get<bool>();
    g.basis.all_columns = b.at("all_columns").get<bool>();
    g.basis.columns = b.at("columns").get<std::vector<int>>();
    g.mean_fit.coefficients = detail::from_vec(j.at("coefficients").get<std::vector<double>>());
    g.mean_fit.family = Family::gaussian;
    g.sigma2 = j.at("sigma2").get<double>();
    if (!(g.sigma2 > 0.0)) throw DataError("density model: sigma2 must be positive");
    doc.model = std::move(g);
  } else if (kind == "haldensify") {
    CondDensityModel c;
    c.bin_edges = j.at("bin_edges").get<std::vector<double>>();
    if (c.bin_edges.size() < 3) throw DataError("density model: needs at least 2 bins");
    c.n_bins_selected = j.at("n_bins_selected").get<int>();
    c.hazard_model = hal_from_json(j.at("hazard_model"));
    for (const auto& s : detail::get_or(j, "selection", json::array())) {
      c.selection.push_back({s.at("n_bins").get<int>(), s.at("lambda").get<double>(), s.at("cv_risk").get<double>()});
    }
    c.warnings = detail::get_or(j, "warnings", std::vector<std::string>{});
    if (c.hazard_model.basis.n_covariates != static_cast<int>(doc.covariate_names.size()) + 1) {
      throw DataError("density model: hazard model does not match the covariate list");
    }
    doc.model = std::move(c);
  } else {
    throw DataError("density model: unknown kind '" + kind + "'");
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Estimates and MSM

inline json estimate_to_json(const EstimateResult& r) {
  return {{"variant", to_string(r.variant)},
          {"delta", r.delta},
          {"psi", r.psi},
          {"se", r.se},
          {"ci_lo", r.ci_lo},
          {"ci_hi", r.ci_hi},
          {"p_value", r.p_value},
          {"diagnostics",
           {{"psi_plugin", r.psi_plugin},
            {"xi", r.tilt.xi},
            {"epsilon", r.tilt.epsilon},
            {"score_C", r.tilt.score_C},
            {"score_Y", r.tilt.score_Y},
            {"sampling_iterations", r.tilt.sampling_iterations},
            {"outcome_iterations", r.tilt.outcome_iterations},
            {"sampling_converged", r.tilt.sampling_converged},
            {"outcome_converged", r.tilt.outcome_converged},
            {"floored_density_rows", r.floored_density},
            {"support_bound_rows", r.bound_active},
            {"n", r.eif_values.size()},
            {"warnings", r.warnings}}}};
}

inline void write_estimates_csv(const std::vector<EstimateResult>& results, std::ostream& out) {
  out << "variant,delta,psi,se,ci_lo,ci_hi,p_value\n";
  for (const auto& r : results) {
    out << to_string(r.variant) << ',' << format_double(r.delta) << ',' << format_double(r.psi) << ','
        << format_double(r.se) << ',' << format_double(r.ci_lo) << ',' << format_double(r.ci_hi) << ','
        << format_double(r.p_value) << '\n';
  }
}

inline json msm_to_json(const MsmFit& m) {
  json ci = json::array();
  for (Eigen::Index j = 0; j < m.beta.size(); ++j) ci.push_back({m.ci_lo[j], m.ci_hi[j]});
  json cov = json::array();
  for (Eigen::Index r = 0; r < m.covariance.rows(); ++r) cov.push_back(detail::to_vec(m.covariance.row(r).transpose()));
  return {{"model_form", m.model_form},
          {"deltas", m.deltas},
          {"psis", m.psis},
          {"h", detail::to_vec(m.h)},
          {"beta", detail::to_vec(m.beta)},
          {"se", detail::to_vec(m.se)},
          {"ci", ci},
          {"p", detail::to_vec(m.p_value)},
          {"covariance", cov},
          {"degenerate", m.degenerate},
          {"warnings", m.warnings}};
}

/// Plot-ready rows: delta, estimate, its interval, and the working-model fit.
inline void write_msm_csv(const MsmFit& m, const std::vector<EstimateResult>& grid, std::ostream& out) {
  out << "delta,psi,ci_lo,ci_hi,msm_fit\n";
  for (const auto& r : grid) {
    out << format_double(r.delta) << ',' << format_double(r.psi) << ',' << format_double(r.ci_lo) << ','
        << format_double(r.ci_hi) << ',' << format_double(m.predict(r.delta)) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Configuration documents

inline LearnerMethod parse_learner(const std::string& s) {
  if (s == "glm") return LearnerMethod::glm;
  if (s == "hal") return LearnerMethod::hal;
  throw ConfigError("unknown learner '" + s + "' (expected glm or hal)");
}

inline SamplingMethod parse_sampling(const std::string& s) {
  if (s == "glm") return SamplingMethod::logistic_glm;
  if (s == "hal") return SamplingMethod::hal;
  if (s == "known_one") return SamplingMethod::known_one;
  throw ConfigError("unknown sampling method '" + s + "' (expected glm, hal or known_one)");
}

inline DensityMethod parse_density_method(const std::string& s) {
  if (s == "gaussian") return DensityMethod::gaussian;
  if (s == "haldensify") return DensityMethod::haldensify;
  throw ConfigError("unknown density method '" + s + "' (expected gaussian or haldensify)");
}

inline BinRule parse_bin_rule(const std::string& s) {
  if (s == "equal_range") return BinRule::equal_range;
  if (s == "equal_mass") return BinRule::equal_mass;
  throw ConfigError("unknown bin rule '" + s + "' (expected equal_range or equal_mass)");
}

inline SupportMode parse_support_mode(const std::string& s) {
  if (s == "empirical_max") return SupportMode::empirical_max;
  if (s == "density_threshold") return SupportMode::density_threshold;
  if (s == "unbounded") return SupportMode::unbounded;
  throw ConfigError("unknown support mode '" + s + "'");
}

inline HalConfig hal_config_from_json(const json& j, HalConfig cfg = {}) {
  detail::reject_unknown(j, {"max_degree", "max_knots_per_dim", "n_lambda", "lambda_min_ratio", "cv_folds"}, "hal");
  cfg.max_degree = detail::get_or(j, "max_degree", cfg.max_degree);
  cfg.max_knots_per_dim = detail::get_or(j, "max_knots_per_dim", cfg.max_knots_per_dim);
  cfg.n_lambda = detail::get_or(j, "n_lambda", cfg.n_lambda);
  cfg.lambda_min_ratio = detail::get_or(j, "lambda_min_ratio", cfg.lambda_min_ratio);
  cfg.cv_folds = detail::get_or(j, "cv_folds", cfg.cv_folds);
  if (cfg.max_degree < 1 || cfg.max_knots_per_dim < 2 || cfg.n_lambda < 1 || !(cfg.lambda_min_ratio > 0.0) ||
      cfg.cv_folds < 1) {
    throw ConfigError("hal: settings out of range");
  }
  return cfg;
}

/// Study configuration document. Every key is optional except dgp.
inline StudyConfig study_config_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"dgp", "w1_sd", "sample_sizes", "deltas", "reps", "variants", "seed", "workers",
                          "truth_draws", "alpha", "support_mode", "g_method", "q_method", "density_method",
                          "eif_method", "zeta", "hal", "haldensify", "weights_from_targeted_g",
                          "max_failure_rate", "description"},
                         "study config");
  StudyConfig c;
  try {
    if (!j.contains("dgp")) throw ConfigError("study config: 'dgp' is required");
    c.dgp = parse_dgp(j.at("dgp").get<std::string>());
    c.w1_sd = detail::get_or(j, "w1_sd", c.w1_sd);
    c.sample_sizes = detail::get_or(j, "sample_sizes", c.sample_sizes);
    c.deltas = detail::get_or(j, "deltas", c.deltas);
    c.reps = detail::get_or(j, "reps", c.reps);
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j.at("variants")) c.variants.push_back(parse_variant(v.get<std::string>()));
    }
    c.seed = detail::get_or(j, "seed", c.seed);
    c.workers = detail::get_or(j, "workers", c.workers);
    c.truth_draws = detail::get_or(j, "truth_draws", c.truth_draws);
    c.max_failure_rate = detail::get_or(j, "max_failure_rate", c.max_failure_rate);
    auto& e = c.estimate;
    e.alpha = detail::get_or(j, "alpha", e.alpha);
    e.support_mode = parse_support_mode(detail::get_or<std::string>(j, "support_mode", "empirical_max"));
    e.tmle.weights_from_targeted_g = detail::get_or(j, "weights_from_targeted_g", true);
    auto& nc = e.nuisance;
    nc.g_method = parse_sampling(detail::get_or<std::string>(j, "g_method", "glm"));
    nc.q_method = parse_learner(detail::get_or<std::string>(j, "q_method", "glm"));
    nc.density_method = parse_density_method(detail::get_or<std::string>(j, "density_method", "gaussian"));
    nc.eif_method = parse_learner(detail::get_or<std::string>(j, "eif_method", "glm"));
    nc.zeta = detail::get_or(j, "zeta", nc.zeta);
    if (j.contains("hal")) nc.hal = hal_config_from_json(j.at("hal"), nc.hal);
    if (j.contains("haldensify")) {
      const auto& h = j.at("haldensify");
      detail::reject_unknown(h, {"n_bins", "bin_rule", "hal"}, "haldensify");
      nc.haldensify.n_bins_grid = detail::get_or(h, "n_bins", nc.haldensify.n_bins_grid);
      nc.haldensify.bin_rule = parse_bin_rule(detail::get_or<std::string>(h, "bin_rule", "equal_mass"));
      if (h.contains("hal")) nc.haldensify.hal = hal_config_from_json(h.at("hal"), nc.haldensify.hal);
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("study config: ") + ex.what());
  }
  if (!(c.estimate.nuisance.zeta > 0.0 && c.estimate.nuisance.zeta < 0.5)) throw ConfigError("zeta must lie in (0, 0.5)");
  if (!(c.estimate.alpha > 0.0 && c.estimate.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (c.w1_sd <= 0.0) throw ConfigError("w1_sd must be positive");
  c.check();
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

/// FNV-1a over the canonical dump; object keys are sorted, so the digest
/// does not depend on key order in the source document.
inline std::string config_digest(const json& j) {
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int k = 15; k >= 0; --k, h >>= 4) out[static_cast<std::size_t>(k)] = hex[h & 0xf];
  return out;
}

}  // namespace tpshift

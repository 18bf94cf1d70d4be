#include <gtest/gtest.h>

#include "tpshift/nuisance.hpp"
#include "tpshift/sim.hpp"

using namespace tpshift;

namespace {

ObservedDataset small_dataset() {
  Eigen::MatrixXd W(8, 1);
  W << 0.1, 0.4, 0.2, 0.9, 0.5, 0.3, 0.8, 0.6;
  std::vector<std::optional<double>> a{1.0, 2.0, std::nullopt, 0.5, 1.5, std::nullopt, 2.5, 1.2};
  std::vector<int> c{1, 1, 0, 1, 1, 0, 1, 1};
  Eigen::VectorXd y(8);
  y << 0, 1, 0, 0, 1, 1, 1, 0;
  return ObservedDataset(W, a, c, y);
}

}  // namespace

TEST(Nuisance, AuxiliaryCovariateCases) {
  // Interior: only the density ratio.
  EXPECT_DOUBLE_EQ(auxiliary_covariate(1.0, 0.5, 3.0, 0.2, 0.4), 0.5);
  // Shift blocked: ratio plus one.
  EXPECT_DOUBLE_EQ(auxiliary_covariate(2.8, 0.5, 3.0, 0.2, 0.4), 1.5);
  // At or beyond the bound: only the indicator.
  EXPECT_DOUBLE_EQ(auxiliary_covariate(3.0, 0.5, 3.0, 0.2, 0.4), 1.0);
  // Denominator floored.
  EXPECT_DOUBLE_EQ(auxiliary_covariate(1.0, 0.5, 3.0, 0.2, 1e-6), 200.0);
  EXPECT_DOUBLE_EQ(auxiliary_covariate(1.0, 0.5, 3.0, 0.2, 1e-6, 0.1), 2.0);
}

TEST(Nuisance, PseudoOutcomeFormula) {
  Eigen::VectorXd y(2), qo(2), qs(2), h(2);
  y << 1, 0;
  qo << 0.3, 0.6;
  qs << 0.4, 0.5;
  h << 2.0, 0.5;
  auto d = pseudo_outcomes(y, qo, qs, h, 0.45);
  EXPECT_DOUBLE_EQ(d[0], 2.0 * 0.7 + 0.4 - 0.45);
  EXPECT_DOUBLE_EQ(d[1], 0.5 * -0.6 + 0.5 - 0.45);
}

TEST(Nuisance, JointWeightsNormalizeOverSampledRows) {
  Eigen::VectorXd c(4), g(4);
  c << 1, 0, 1, 1;
  g << 0.5, 0.2, 0.25, 1.0;
  auto w = joint_distribution_weights(c, g);
  EXPECT_DOUBLE_EQ(w[1], 0.0);
  EXPECT_NEAR(w.sum(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(w[2] / w[0], 2.0);
  auto u = joint_distribution_weights(Eigen::VectorXd::Ones(4), Eigen::VectorXd::Ones(4));
  for (auto v : u) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Nuisance, SamplingMechanismChecks) {
  auto ds = small_dataset();
  EXPECT_THROW(fit_sampling_mechanism(ds, SamplingMethod::logistic_glm, 0.0), ConfigError);
  EXPECT_THROW(fit_sampling_mechanism(ds, SamplingMethod::logistic_glm, 0.5), ConfigError);
  auto one = fit_sampling_mechanism(ds, SamplingMethod::known_one, 0.01);
  EXPECT_EQ(one.predict(Eigen::MatrixXd::Zero(3, 2)), Eigen::VectorXd::Ones(3));
  EXPECT_THROW(fit_sampling_mechanism(ds.phase2_subset(), SamplingMethod::logistic_glm, 0.01), FitError);
}

TEST(Nuisance, SamplingPredictionsAreTruncated) {
  auto draw = generate({.name = DgpName::dgp1, .n = 400, .seed = 5});
  auto m = fit_sampling_mechanism(draw.data, SamplingMethod::logistic_glm, 0.45);
  auto g = m.predict(outcome_covariates(draw.data.outcome(), draw.data.covariates()));
  EXPECT_GE(g.minCoeff(), 0.45);
  EXPECT_LE(g.maxCoeff(), 1.0);
  EXPECT_DOUBLE_EQ(g.minCoeff(), 0.45);
}

TEST(Nuisance, OutcomeRegressionUsesInverseSamplingWeights) {
  auto draw = generate({.name = DgpName::dgp1, .n = 300, .seed = 6});
  const auto& ds = draw.data;
  Eigen::VectorXd g2 = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(ds.phase2_count()), 0.2, 0.9);
  auto r = fit_outcome_regression(ds, g2, LearnerMethod::glm);
  Eigen::VectorXd y(g2.size());
  for (std::size_t k = 0; k < ds.phase2_rows().size(); ++k) y[static_cast<Eigen::Index>(k)] = ds.outcome(ds.phase2_rows()[k]);
  const Eigen::MatrixXd X = with_intercept(exposure_covariates(ds.phase2_exposure(), ds.phase2_covariates()));
  auto direct = fit_logistic(X, y, g2.cwiseInverse());
  EXPECT_LT((r.glm.coefficients - direct.coefficients).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Nuisance, EifProjectionDropsConstantColumns) {
  Eigen::MatrixXd X(5, 2);
  X << 1, 0.1, 1, 0.5, 1, 0.9, 1, 0.2, 1, 0.7;
  Eigen::VectorXd d(5);
  d << 0.2, 1.0, 1.8, 0.4, 1.4;
  auto r = fit_eif_projection(X, d, LearnerMethod::glm);
  ASSERT_EQ(r.glm.coefficients.size(), 3);
  EXPECT_EQ(r.glm.coefficients[1], 0.0);
  EXPECT_NEAR(r.glm.coefficients[2], 2.0, 1e-12);
  EXPECT_LT((r.predict(X) - d).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Nuisance, CompleteNuisanceMatchesDirectComputation) {
  auto draw = generate({.name = DgpName::dgp1, .n = 500, .seed = 7});
  const auto& ds = draw.data;
  NuisanceConfig cfg;
  auto init = fit_initial_nuisance(ds, cfg);
  const ShiftSpec spec{.delta = 0.5};
  auto s = complete_nuisance(ds, init, spec, cfg);
  const auto& gm = std::get<GaussianDensityModel>(init.density);
  const double u = ds.phase2_exposure().maxCoeff();
  const auto& rows = ds.phase2_rows();
  double psi = 0.0;
  int blocked = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = rows[k];
    const auto kk = static_cast<Eigen::Index>(k);
    const double a = ds.exposure(i);
    const double ad = a + 0.5 <= u ? a + 0.5 : a;
    blocked += ad == a;
    EXPECT_EQ(s.a_shift[kk], ad);
    const double mu = gm.mean(ds.covariate_row(i));
    double h = a < u ? normal_pdf(a - 0.5, mu, gm.sigma2) / std::max(normal_pdf(a, mu, gm.sigma2), 1e-3) : 0.0;
    if (a + 0.5 >= u) h += 1.0;
    EXPECT_NEAR(s.h_obs[kk], h, 1e-12);
    Eigen::RowVectorXd x(5);
    x << 1.0, ad, ds.covariate_row(i);
    const double q = expit(x.dot(init.outcome.glm.coefficients));
    EXPECT_NEAR(s.q_shift[kk], q, 1e-12);
    psi += init.q_aw[static_cast<Eigen::Index>(i)] * q;
  }
  EXPECT_EQ(s.bound_active, blocked);
  EXPECT_NEAR(s.psi_plugin, psi, 1e-12);
  ASSERT_TRUE(s.eif_projection.has_value());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.in_phase2(i)) {
      EXPECT_NE(s.G[static_cast<Eigen::Index>(i)], 0.0);
      break;
    }
  }
  auto no_g = complete_nuisance(ds, init, spec, cfg, false);
  EXPECT_EQ(no_g.G.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Nuisance, ZeroShiftPluginIsWeightedMeanOfFit) {
  auto draw = generate({.name = DgpName::dgp1, .n = 300, .seed = 8});
  NuisanceConfig cfg;
  auto init = fit_initial_nuisance(draw.data, cfg);
  auto s = complete_nuisance(draw.data, init, {.delta = 0.0}, cfg, false);
  EXPECT_EQ(s.bound_active, 0);
  EXPECT_EQ(s.q_obs, s.q_shift);
}

#include <gtest/gtest.h>

#include "tpshift/estimators.hpp"
#include "tpshift/sim.hpp"

using namespace tpshift;

TEST(Wald, MatchesHandComputation) {
  Eigen::VectorXd eif(5);
  eif << -1.0, 0.5, 0.25, 2.0, -1.75;
  const double mean = eif.mean();
  double ss = 0.0;
  for (auto v : eif) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / 4.0);
  auto w = wald_inference(0.3, eif, 0.05);
  EXPECT_NEAR(w.se, sd / std::sqrt(5.0), 1e-15);
  EXPECT_NEAR(w.ci_lo, 0.3 - 1.959963984540054 * sd / std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(w.p_value, 2.0 * (1.0 - normal_cdf(std::sqrt(5.0) * 0.3 / sd)), 1e-12);
  EXPECT_FALSE(w.degenerate);
}

TEST(Wald, DegenerateVariance) {
  auto w = wald_inference(0.2, Eigen::VectorXd::Zero(10));
  EXPECT_TRUE(w.degenerate);
  EXPECT_EQ(w.ci_lo, 0.2);
  EXPECT_EQ(w.ci_hi, 0.2);
  EXPECT_EQ(w.p_value, 0.0);
  EXPECT_THROW(wald_inference(0.2, Eigen::VectorXd::Ones(1)), FitError);
  EXPECT_THROW(wald_inference(0.2, Eigen::VectorXd::Ones(3), 1.5), ConfigError);
}

TEST(Eif, ObservedFormula) {
  EXPECT_DOUBLE_EQ(eif_observed(0, 0.4, 99.0, 0.3), 0.3);
  EXPECT_DOUBLE_EQ(eif_observed(1, 0.5, 1.0, 0.3), 2.0 - 0.3);
  EXPECT_DOUBLE_EQ(eif_observed(1, 1.0, 0.7, 0.3), 0.7);
}

TEST(Variants, ParseRoundTrip) {
  for (auto v : {Variant::plugin, Variant::onestep, Variant::tmle, Variant::onestep_reweighted,
                 Variant::tmle_reweighted, Variant::onestep_naive, Variant::tmle_naive}) {
    EXPECT_EQ(parse_variant(to_string(v)), v);
  }
  EXPECT_THROW(parse_variant("bogus"), ConfigError);
}

TEST(Tilt, SamplingTiltSolvesScore) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const int n = 500;
  Eigen::VectorXd c(n), g(n), G(n);
  for (int i = 0; i < n; ++i) {
    const double p = 0.2 + 0.6 * ud(rng);
    c[i] = ud(rng) < p ? 1.0 : 0.0;
    g[i] = std::clamp(p + 0.1, 0.05, 1.0);
    G[i] = ud(rng) - 0.3;
  }
  auto t = tilt_sampling(c, g, G, 0.01);
  EXPECT_TRUE(t.converged);
  EXPECT_LT(t.score, 1e-6);
  EXPECT_GE(t.g.minCoeff(), 0.01);
  // Already solved: no movement.
  auto again = tilt_sampling(c, t.g, G, 0.01);
  EXPECT_EQ(again.iterations, 0);
  EXPECT_EQ(again.g, t.g);
}

TEST(Estimators, OnestepIsPluginPlusMeanEif) {
  auto draw = generate({.name = DgpName::dgp1, .n = 600, .seed = 3});
  Estimator est(draw.data, {});
  auto r = est.run(0.5, Variant::onestep);
  EXPECT_NEAR(r.psi, r.psi_plugin + r.eif_values.mean(), 1e-14);
  auto rw = est.run(0.5, Variant::onestep_reweighted);
  EXPECT_EQ(rw.psi_plugin, r.psi_plugin);
  EXPECT_NEAR(rw.psi, rw.psi_plugin + rw.eif_values.mean(), 1e-14);
  auto p = est.run(0.5, Variant::plugin);
  EXPECT_EQ(p.psi, r.psi_plugin);
}

TEST(Estimators, TmleSolvesScoresAndMeanEif) {
  auto draw = generate({.name = DgpName::dgp1, .n = 800, .seed = 4});
  Estimator est(draw.data, {});
  for (auto v : {Variant::tmle, Variant::tmle_reweighted, Variant::tmle_naive}) {
    auto r = est.run(0.5, v);
    EXPECT_LT(r.tilt.score_Y, 1e-6) << to_string(v);
    EXPECT_LT(r.tilt.score_C, 1e-6) << to_string(v);
    if (v != Variant::tmle_reweighted) EXPECT_LT(std::abs(r.eif_values.mean()), 1e-5) << to_string(v);
    EXPECT_TRUE(r.tilt.outcome_converged);
  }
}

TEST(Estimators, NaiveUsesOnlySampledRows) {
  auto draw = generate({.name = DgpName::dgp1, .n = 400, .seed = 9});
  Estimator est(draw.data, {});
  auto naive = est.run(0.5, Variant::onestep_naive);
  EXPECT_EQ(static_cast<std::size_t>(naive.eif_values.size()), draw.data.phase2_count());
  EstimateOptions opts;
  opts.nuisance.g_method = SamplingMethod::known_one;
  Estimator direct(draw.data.phase2_subset(), opts);
  auto ref = direct.run(0.5, Variant::onestep);
  EXPECT_NEAR(naive.psi, ref.psi, 1e-12);
}

TEST(Estimators, FullSamplingReduction) {
  // With every row sampled and g = 1 known, all variants coincide.
  auto draw = generate({.name = DgpName::dgp1, .n = 300, .seed = 12});
  std::vector<std::optional<double>> a;
  for (auto x : draw.full_exposure) a.emplace_back(x);
  ObservedDataset full(draw.data.covariates(), a, std::vector<int>(300, 1), draw.data.outcome());
  EstimateOptions opts;
  opts.nuisance.g_method = SamplingMethod::known_one;
  Estimator est(full, opts);
  const double os = est.run(0.5, Variant::onestep).psi;
  for (auto v : {Variant::onestep_reweighted, Variant::onestep_naive}) EXPECT_NEAR(est.run(0.5, v).psi, os, 1e-10);
  const double tm = est.run(0.5, Variant::tmle).psi;
  for (auto v : {Variant::tmle_reweighted, Variant::tmle_naive}) EXPECT_NEAR(est.run(0.5, v).psi, tm, 1e-10);
}

TEST(Estimators, CloseToTruthAtLargeN) {
  auto draw = generate({.name = DgpName::dgp1, .n = 4000, .seed = 21});
  const double truth = true_psi(DgpName::dgp1, 0.5, 200000, 77).psi;
  Estimator est(draw.data, {});
  for (auto v : {Variant::onestep, Variant::tmle}) {
    auto r = est.run(0.5, v);
    EXPECT_LT(std::abs(r.psi - truth), 4.0 * r.se) << to_string(v);
    EXPECT_LT(r.ci_lo, r.psi);
    EXPECT_GT(r.ci_hi, r.psi);
  }
}

TEST(Estimators, RunIsRepeatable) {
  auto draw = generate({.name = DgpName::dgp1, .n = 200, .seed = 13});
  auto a = estimate(draw.data, {-0.5, 0.5}, {Variant::tmle}, {});
  auto b = estimate(draw.data, {-0.5, 0.5}, {Variant::tmle}, {});
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].psi, b[0].psi);
  EXPECT_EQ(a[1].eif_values, b[1].eif_values);
  EXPECT_NE(a[0].psi, a[1].psi);
}

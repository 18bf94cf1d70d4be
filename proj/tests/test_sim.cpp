#include <gtest/gtest.h>

#include <sstream>

#include "tpshift/sim.hpp"

using namespace tpshift;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// E[expit(X)] for X ~ N(m, s^2) by composite Simpson on [-10, 10] in z.
double mean_expit_normal(double m, double s) {
  const int k = 4000;
  const double lo = -10.0, h = 20.0 / k;
  double acc = 0.0;
  for (int i = 0; i <= k; ++i) {
    const double z = lo + i * h;
    const double f = sigmoid(m + s * z) * std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    acc += f * (i == 0 || i == k ? 1.0 : (i % 2 ? 4.0 : 2.0));
  }
  return acc * h / 3.0;
}

// P(Y = 1) after shifting A by delta, integrated from the structural
// equations: given the discrete covariates the linear predictor is normal.
double dgp1_rate(double delta) {
  double p = 0.0;
  for (int w2 = 0; w2 <= 1; ++w2) {
    for (int w3 = 0; w3 <= 1; ++w3) {
      const double pw = (w2 ? 0.6 : 0.4) * (w3 ? 0.3 : 0.7);
      const double m = (3.0 + w2 + w3) / 3.0 - 2.0 * (w2 + w3) - delta;
      p += pw * mean_expit_normal(m, std::sqrt(1.0 / 9.0 + 1.0));
    }
  }
  return p;
}

double dgp2_rate(double delta, bool null_effect) {
  const double b_a = null_effect ? 0.0 : -0.033;
  const double b0 = null_effect ? -2.8 : -2.9;
  double p = 0.0;
  double pois = std::exp(-40.0);
  for (int w2 = 0; w2 <= 120; ++w2) {
    if (w2 > 0) pois *= 40.0 / w2;
    for (int w3 = 0; w3 <= 1; ++w3) {
      for (int w4 = 0; w4 <= 1; ++w4) {
        const double pw = pois * (w3 ? 0.4 : 0.6) * (w4 ? 0.3 : 0.7);
        // A = mu_A(W) + 0.2 Z with mu_A linear in W1 ~ N(26.6, 5.7^2).
        const double a_mean = -1.37 + 0.004 * 26.6 + 0.015 * w2 + 0.05 * w3 + 0.25 * w4;
        const double m = b0 - 0.0013 * 26.6 - 0.0016 * w2 + 0.0678 * w3 + 0.039 * w4 + b_a * (a_mean + delta);
        const double slope_w1 = -0.0013 + b_a * 0.004;
        const double s = std::sqrt(std::pow(slope_w1 * 5.7, 2) + std::pow(b_a * 0.2, 2));
        p += pw * mean_expit_normal(m, s);
      }
    }
  }
  return p;
}

double outcome_rate(const SimDraw& d) { return d.data.outcome().mean(); }

}  // namespace

TEST(Quadrature, MatchesLogisticNormalIdentity) {
  // E[expit(X)] = 1/2 for any symmetric X around 0.
  EXPECT_NEAR(mean_expit_normal(0.0, 2.0), 0.5, 1e-12);
  EXPECT_NEAR(mean_expit_normal(1.5, 0.0), sigmoid(1.5), 1e-12);
}

TEST(Generate, Dgp1OutcomeRate) {
  auto d = generate({.name = DgpName::dgp1, .n = 1000000, .seed = 101});
  const double p = outcome_rate(d);
  EXPECT_NEAR(p, 0.415, 0.002);
  EXPECT_NEAR(p, dgp1_rate(0.0), 4.0 * std::sqrt(p * (1 - p) / 1e6));
}

TEST(Generate, Dgp2OutcomeRateMatchesStructuralEquations) {
  auto d = generate({.name = DgpName::dgp2, .n = 1000000, .seed = 102});
  const double p = outcome_rate(d);
  EXPECT_NEAR(p, dgp2_rate(0.0, false), 4.0 * std::sqrt(p * (1 - p) / 1e6));
}

TEST(Generate, Dgp2NullOutcomeRate) {
  auto d = generate({.name = DgpName::dgp2_null, .n = 1000000, .seed = 103});
  const double p = outcome_rate(d);
  EXPECT_NEAR(p, 0.053, 0.002);
  EXPECT_NEAR(p, dgp2_rate(0.0, true), 4.0 * std::sqrt(p * (1 - p) / 1e6));
}

TEST(Generate, Dgp2SamplesEveryCase) {
  for (auto name : {DgpName::dgp2, DgpName::dgp2_null}) {
    auto d = generate({.name = name, .n = 50000, .seed = 104});
    std::size_t cases = 0;
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      if (d.data.outcome(i) == 1.0) {
        ++cases;
        ASSERT_TRUE(d.data.in_phase2(i)) << "row " << i;
      }
    }
    EXPECT_GT(cases, 0u);
    EXPECT_LT(d.data.phase2_count(), d.data.size());
  }
}

TEST(Generate, ExposureHiddenOutsidePhaseTwo) {
  auto d = generate({.name = DgpName::dgp1, .n = 500, .seed = 105});
  ASSERT_EQ(d.full_exposure.size(), 500);
  for (std::size_t k = 0; k < d.data.phase2_rows().size(); ++k) {
    const auto i = d.data.phase2_rows()[k];
    EXPECT_EQ(d.data.exposure(i), d.full_exposure[static_cast<Eigen::Index>(i)]);
  }
  EXPECT_EQ(d.data.covariate_names(), (std::vector<std::string>{"w1", "w2", "w3"}));
}

TEST(Generate, SeedDeterminesDraw) {
  auto a = generate({.name = DgpName::dgp2, .n = 200, .seed = 7});
  auto b = generate({.name = DgpName::dgp2, .n = 200, .seed = 7});
  auto c = generate({.name = DgpName::dgp2, .n = 200, .seed = 8});
  EXPECT_EQ(a.full_exposure, b.full_exposure);
  EXPECT_EQ(a.data.covariates(), b.data.covariates());
  EXPECT_NE(a.full_exposure, c.full_exposure);
  EXPECT_THROW(generate({.name = DgpName::dgp1, .n = 5}), ConfigError);
}

TEST(TruePsi, Dgp1AgreesWithQuadrature) {
  for (double delta : {-0.5, 0.0, 0.5}) {
    auto t = true_psi(DgpName::dgp1, delta, 1000000, 11);
    EXPECT_NEAR(t.psi, dgp1_rate(delta), 4.0 * t.mc_se) << delta;
  }
  EXPECT_NEAR(dgp1_rate(-0.5), 0.501, 0.005);
  EXPECT_NEAR(dgp1_rate(0.0), 0.415, 0.005);
  EXPECT_NEAR(dgp1_rate(0.5), 0.333, 0.005);
}

TEST(TruePsi, ZeroShiftMatchesEmpiricalOutcomeRate) {
  auto t = true_psi(DgpName::dgp1, 0.0, 1000000, 12);
  auto d = generate({.name = DgpName::dgp1, .n = 1000000, .seed = 13});
  const double p = outcome_rate(d);
  const double se = std::sqrt(t.mc_se * t.mc_se + p * (1 - p) / 1e6);
  EXPECT_NEAR(t.psi, p, 4.0 * se);
}

TEST(TruePsi, Dgp2AgreesWithQuadrature) {
  for (double delta : {-2.0, 0.0, 2.0}) {
    auto t = true_psi(DgpName::dgp2, delta, 400000, 14);
    EXPECT_NEAR(t.psi, dgp2_rate(delta, false), 4.0 * t.mc_se) << delta;
    auto z = true_psi(DgpName::dgp2_null, delta, 400000, 15);
    EXPECT_NEAR(z.psi, dgp2_rate(delta, true), 4.0 * z.mc_se) << delta;
  }
  EXPECT_THROW(true_psi(DgpName::dgp1, 0.0, 1, 1), ConfigError);
}

TEST(Summarize, TrivialCells) {
  std::vector<RepRecord> recs(10);
  for (int r = 0; r < 10; ++r) {
    recs[static_cast<std::size_t>(r)] = {Variant::tmle, 100, 0.5, r, 0.3, 0.01, 0.1, 0.2, 0.3, false, true, {}};
  }
  auto m = summarize(recs);
  EXPECT_EQ(m.coverage, 0.0);
  EXPECT_EQ(m.sqrt_n_bias, 0.0);
  EXPECT_EQ(m.n_mse, 0.0);
  EXPECT_EQ(m.reps_used, 10);
  for (auto& r : recs) r.covered = true;
  EXPECT_EQ(summarize(recs).coverage, 1.0);

  recs[0].psi_hat = 0.4;
  recs[1].ok = false;
  m = summarize(recs);
  EXPECT_EQ(m.reps_used, 9);
  EXPECT_EQ(m.reps_failed, 1);
  EXPECT_NEAR(m.sqrt_n_bias, 10.0 * 0.1 / 9.0, 1e-12);
  EXPECT_NEAR(m.n_mse, 100.0 * 0.01 / 9.0, 1e-12);
  EXPECT_NEAR(m.mean_ci_width, 0.1, 1e-12);
}

TEST(Study, ByteIdenticalAcrossWorkerCounts) {
  StudyConfig cfg;
  cfg.sample_sizes = {60, 120};
  cfg.deltas = {0.0, 0.5};
  cfg.reps = 6;
  cfg.truth_draws = 20000;
  cfg.variants = {Variant::onestep, Variant::tmle_reweighted};
  std::string first;
  for (int workers : {1, 3, 8}) {
    cfg.workers = workers;
    auto res = run_study(cfg);
    std::ostringstream m, r;
    write_metrics_csv(res.metrics, m);
    write_raw_csv(res.raw, r);
    const std::string text = m.str() + r.str();
    if (first.empty()) {
      first = text;
    } else {
      EXPECT_EQ(text, first) << workers << " workers";
    }
  }
}

TEST(Study, OutputLayout) {
  StudyConfig cfg;
  cfg.sample_sizes = {80};
  cfg.reps = 3;
  cfg.truth_draws = 5000;
  std::size_t calls = 0;
  auto res = run_study(cfg, [&](std::size_t done, std::size_t total) {
    ++calls;
    EXPECT_LE(done, total);
  });
  EXPECT_EQ(calls, 3u);
  ASSERT_EQ(res.metrics.size(), 2u);
  EXPECT_EQ(res.raw.size(), 6u);
  std::ostringstream m, r;
  write_metrics_csv(res.metrics, m);
  write_raw_csv(res.raw, r);
  EXPECT_EQ(m.str().substr(0, m.str().find('\n')), "variant,n,delta,sqrt_n_bias,n_mse,coverage,mean_ci_width,reps_used");
  EXPECT_EQ(r.str().substr(0, r.str().find('\n')), "variant,n,delta,rep,psi_hat,se,ci_lo,ci_hi,truth,covered");
  for (const auto& row : res.metrics) {
    EXPECT_GE(row.coverage, 0.0);
    EXPECT_LE(row.coverage, 1.0);
    EXPECT_GE(row.n_mse, 0.0);
  }
}

TEST(Study, FailureRateGuard) {
  StudyConfig cfg;
  StudyResult res;
  MetricsRow row;
  row.reps_used = 9;
  row.reps_failed = 1;
  res.metrics.push_back(row);
  RepRecord bad;
  bad.ok = false;
  bad.error = "boom";
  res.raw.push_back(bad);
  EXPECT_THROW(check_failure_rate(res, cfg), FitError);
  res.metrics[0].reps_used = 99;
  EXPECT_NO_THROW(check_failure_rate(res, cfg));
  cfg.reps = 0;
  EXPECT_THROW(run_study(cfg), ConfigError);
}

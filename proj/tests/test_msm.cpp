#include <gtest/gtest.h>

#include <random>

#include "tpshift/msm.hpp"

using namespace tpshift;

namespace {

// n x K matrix of correlated draws; column k has mean 0.3 + 0.1 * k.
Eigen::MatrixXd correlated_draws(int n, int K, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd X(n, K);
  for (int i = 0; i < n; ++i) {
    const double common = nd(rng);
    for (int k = 0; k < K; ++k) X(i, k) = 0.3 + 0.1 * k + common * (1.0 + 0.2 * k) + 0.5 * nd(rng);
  }
  return X;
}

}  // namespace

TEST(Msm, ExactLineIsRecovered) {
  const std::vector<double> d{-1.0, 0.0, 0.5, 2.0};
  std::vector<double> psi;
  for (double x : d) psi.push_back(0.4 - 0.15 * x);
  Eigen::MatrixXd eif = correlated_draws(50, 4, 1);
  auto fit = fit_msm(d, psi, eif, Eigen::VectorXd::Ones(4));
  EXPECT_NEAR(fit.beta[0], 0.4, 1e-12);
  EXPECT_NEAR(fit.beta[1], -0.15, 1e-12);
  EXPECT_NEAR(fit.predict(1.0), 0.25, 1e-12);
}

TEST(Msm, UniformWeightsGiveOrdinaryLeastSquares) {
  const std::vector<double> d{0.0, 1.0, 2.0, 3.0, 4.0};
  const std::vector<double> psi{0.1, 0.35, 0.3, 0.6, 0.62};
  auto fit = fit_msm(d, psi, correlated_draws(30, 5, 2), Eigen::VectorXd::Ones(5));
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    sx += d[k];
    sy += psi[k];
    sxx += d[k] * d[k];
    sxy += d[k] * psi[k];
  }
  const double slope = (5 * sxy - sx * sy) / (5 * sxx - sx * sx);
  EXPECT_NEAR(fit.beta[1], slope, 1e-12);
  EXPECT_NEAR(fit.beta[0], (sy - slope * sx) / 5, 1e-12);
}

TEST(Msm, StandardErrorsAgreeWithBootstrap) {
  const int n = 400, K = 5;
  const std::vector<double> d{-1.0, -0.5, 0.0, 0.5, 1.0};
  const Eigen::MatrixXd X = correlated_draws(n, K, 3);
  const Eigen::RowVectorXd means = X.colwise().mean();
  std::vector<double> psi(means.data(), means.data() + K);
  const Eigen::MatrixXd eif = X.rowwise() - means;
  Eigen::VectorXd h(K);
  h << 1.0, 2.0, 1.0, 0.5, 1.0;
  auto fit = fit_msm(d, psi, eif, h);

  // Nonparametric bootstrap of the whole pipeline: resample rows, recompute
  // the column means and refit.
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> pick(0, n - 1);
  const int B = 2000;
  Eigen::MatrixXd betas(B, 2);
  for (int b = 0; b < B; ++b) {
    Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(K);
    for (int i = 0; i < n; ++i) m += X.row(pick(rng));
    m /= n;
    std::vector<double> pb(m.data(), m.data() + K);
    betas.row(b) = fit_msm(d, pb, eif, h).beta.transpose();
  }
  const Eigen::MatrixXd centered = betas.rowwise() - betas.colwise().mean();
  const Eigen::VectorXd boot_se = ((centered.transpose() * centered).diagonal() / (B - 1)).cwiseSqrt();
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(fit.se[j] / boot_se[j], 1.0, 0.2) << "coefficient " << j;
  }
}

TEST(Msm, QuadraticBasisInterpolatesThreePoints) {
  auto quad = [](double x) {
    Eigen::RowVectorXd r(3);
    r << 1.0, x, x * x;
    return r;
  };
  auto fit = fit_msm({-1.0, 0.0, 1.0}, {0.5, 0.2, 0.7}, correlated_draws(20, 3, 4), Eigen::VectorXd::Ones(3), 0.05,
                     quad, "quadratic");
  EXPECT_NEAR(fit.predict(-1.0, quad), 0.5, 1e-12);
  EXPECT_NEAR(fit.predict(1.0, quad), 0.7, 1e-12);
  EXPECT_EQ(fit.model_form, "quadratic");
}

TEST(Msm, RejectsBadInput) {
  Eigen::MatrixXd eif = correlated_draws(10, 2, 5);
  EXPECT_THROW(fit_msm({0.5, 0.5}, {0.1, 0.2}, eif, Eigen::VectorXd::Ones(2)), FitError);
  EXPECT_THROW(fit_msm({0.5}, {0.1}, eif.leftCols(1), Eigen::VectorXd::Ones(1)), FitError);
  EXPECT_THROW(fit_msm({0.0, 1.0}, {0.1}, eif, Eigen::VectorXd::Ones(2)), ConfigError);
  EXPECT_THROW(fit_msm({0.0, 1.0}, {0.1, 0.2}, eif, -Eigen::VectorXd::Ones(2)), ConfigError);

  EstimateResult a, b;
  a.variant = Variant::tmle;
  b.variant = Variant::onestep;
  a.eif_values = b.eif_values = eif.col(0);
  b.delta = 1.0;
  EXPECT_THROW(fit_msm(std::vector<EstimateResult>{a, b}), ConfigError);
}

TEST(Msm, ZeroVarianceIsFlagged) {
  auto fit = fit_msm({0.0, 1.0}, {0.1, 0.3}, Eigen::MatrixXd::Zero(10, 2), Eigen::VectorXd::Ones(2));
  EXPECT_TRUE(fit.degenerate);
  EXPECT_FALSE(fit.warnings.empty());
  EXPECT_EQ(fit.p_value[1], 0.0);
}

#include <gtest/gtest.h>

#include <random>

#include "tpshift/glm.hpp"

using namespace tpshift;

namespace {

// Root of the intercept-only weighted score sum w (y - expit(o + b)) = 0 by
// bisection. Independent of the IRLS code path.
double intercept_by_bisection(const Eigen::VectorXd& y, const Eigen::VectorXd& w, const Eigen::VectorXd& o) {
  auto score = [&](double b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) s += w[i] * (y[i] - 1.0 / (1.0 + std::exp(-(o[i] + b))));
    return s;
  };
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (score(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(Glm, WlsMatchesNormalEquations) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 3.0);
  const int n = 80;
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n), w(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = nd(rng);
    X(i, 2) = nd(rng);
    y[i] = 1.0 + 2.0 * X(i, 1) - X(i, 2) + nd(rng);
    w[i] = i % 7 == 0 ? 0.0 : ud(rng);
  }
  const Eigen::MatrixXd xtwx = X.transpose() * w.asDiagonal() * X;
  const Eigen::VectorXd oracle = xtwx.llt().solve(X.transpose() * w.asDiagonal() * y);
  auto res = fit_wls(X, y, w);
  EXPECT_LT((res.fit.coefficients - oracle).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Glm, WlsIntegerWeightsEqualReplication) {
  Eigen::MatrixXd X(4, 2);
  X << 1, 0, 1, 1, 1, 2, 1, 3;
  Eigen::VectorXd y(4), w(4);
  y << 0.1, 0.9, 2.2, 2.8;
  w << 1, 3, 1, 2;
  Eigen::MatrixXd Xr(7, 2);
  Eigen::VectorXd yr(7);
  int r = 0;
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < w[i]; ++k) {
      Xr.row(r) = X.row(i);
      yr[r++] = y[i];
    }
  }
  auto a = fit_wls(X, y, w).fit.coefficients;
  auto b = fit_wls(Xr, yr, Eigen::VectorXd::Ones(7)).fit.coefficients;
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Glm, WlsNamesCollinearColumn) {
  Eigen::MatrixXd X(5, 3);
  X << 1, 1, 2, 1, 2, 4, 1, 3, 6, 1, 4, 8, 1, 5, 10;
  Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(5, 0, 1);
  try {
    fit_wls(X, y, Eigen::VectorXd::Ones(5));
    FAIL();
  } catch (const FitError& e) {
    EXPECT_NE(std::string(e.what()).find("collinear"), std::string::npos);
  }
}

TEST(Glm, LogisticInterceptOnlyMatchesBisection) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 50 + rep * 13;
    Eigen::VectorXd y(n), w(n), o(n);
    for (int i = 0; i < n; ++i) {
      y[i] = ud(rng) < 0.3 ? 1.0 : (rep % 2 ? ud(rng) : 0.0);
      w[i] = 0.2 + ud(rng);
      o[i] = rep % 3 == 0 ? 0.0 : nd(rng);
    }
    auto fit = fit_logistic(Eigen::MatrixXd::Ones(n, 1), y, w, o, {.tol = 1e-13});
    ASSERT_TRUE(fit.converged);
    EXPECT_NEAR(fit.coefficients[0], intercept_by_bisection(y, w, o), 1e-10);
  }
}

TEST(Glm, LogisticZeroColumnDesignReturnsOffset) {
  Eigen::VectorXd y(3), w = Eigen::VectorXd::Ones(3), o(3);
  y << 0, 1, 1;
  o << -1, 0, 2;
  auto fit = fit_logistic(Eigen::MatrixXd(3, 0), y, w, o);
  EXPECT_EQ(fit.coefficients.size(), 0);
  auto p = predict_response(fit, Eigen::MatrixXd(3, 0), o);
  EXPECT_NEAR(p[2], expit(2.0), 1e-15);
}

TEST(Glm, LogisticScoreIsZeroAtSolution) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const int n = 400;
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n), w(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = nd(rng);
    X(i, 2) = nd(rng);
    y[i] = ud(rng) < expit(-0.5 + X(i, 1) - 0.5 * X(i, 2)) ? 1.0 : 0.0;
    w[i] = 0.5 + ud(rng);
  }
  auto fit = fit_logistic(X, y, w);
  ASSERT_TRUE(fit.converged);
  Eigen::VectorXd mu = predict_response(fit, X);
  Eigen::VectorXd score = X.transpose() * (w.array() * (y - mu).array()).matrix();
  EXPECT_LT(score.cwiseAbs().maxCoeff() / w.sum(), 1e-8);
}

TEST(Glm, LogisticSeparationWarnsAndClamps) {
  Eigen::MatrixXd X(6, 2);
  X << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
  Eigen::VectorXd y(6);
  y << 0, 0, 0, 1, 1, 1;
  auto fit = fit_logistic(X, y, Eigen::VectorXd::Ones(6));
  EXPECT_FALSE(fit.warnings.empty());
  EXPECT_LE(fit.coefficients.cwiseAbs().maxCoeff(), 30.0);
  auto p = predict_response(fit, X);
  EXPECT_GE(p.minCoeff(), 1e-6);
  EXPECT_LE(p.maxCoeff(), 1.0 - 1e-6);
}

TEST(Glm, LogisticRejectsBadInput) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
  Eigen::VectorXd y(3);
  y << 0, 1, 2;
  EXPECT_THROW(fit_logistic(X, y, Eigen::VectorXd::Ones(3)), FitError);
  y << 0, 1, 1;
  EXPECT_THROW(fit_logistic(X, y, Eigen::VectorXd::Zero(3)), FitError);
  EXPECT_THROW(fit_logistic(X, y, Eigen::VectorXd::Ones(2)), FitError);
}

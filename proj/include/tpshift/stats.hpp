#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace tpshift {

inline constexpr double kProbFloor = 1e-6;

inline double expit(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double clamp_prob(double p, double lo = kProbFloor, double hi = 1.0 - kProbFloor) {
  return std::clamp(p, lo, hi);
}

// log(1 + exp(x)) without overflow.
inline double log1p_exp(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double normal_pdf(double x, double mean = 0.0, double variance = 1.0) {
  const double z = x - mean;
  return std::exp(-0.5 * z * z / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Upper tail 1 - Phi(x), accurate far into the tail.
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// Standard normal quantile.
///
/// Acklam's rational approximation (relative error ~1e-9) followed by one
/// Halley step against erfc, which brings the result to near machine
/// precision on (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw std::domain_error("normal_quantile: p outside [0, 1]");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x = 0.0;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

inline double weighted_mean(const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
  return x.dot(w) / w.sum();
}

/// Sample variance with the n - 1 denominator.
inline double sample_variance(const Eigen::VectorXd& x) {
  const auto n = x.size();
  if (n < 2) return 0.0;
  const double mean = x.mean();
  return (x.array() - mean).square().sum() / static_cast<double>(n - 1);
}

/// Inverse-ECDF (type 1) quantile of an ascending-sorted sample. Always
/// returns an observed value, so knots built from it commute with strictly
/// increasing transforms and are unchanged by duplicating the whole sample.
inline double quantile_type1(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double n = static_cast<double>(sorted.size());
  auto k = static_cast<std::ptrdiff_t>(std::ceil(prob * n - 1e-12)) - 1;
  k = std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(sorted.size()) - 1);
  return sorted[static_cast<std::size_t>(k)];
}

inline std::vector<double> sorted_unique(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

}  // namespace tpshift

#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "tpshift/data.hpp"
#include "tpshift/errors.hpp"
#include "tpshift/estimators.hpp"
#include "tpshift/format.hpp"
#include "tpshift/rng.hpp"
#include "tpshift/stats.hpp"

namespace tpshift {

enum class DgpName { dgp1, dgp2, dgp2_null };

inline const char* to_string(DgpName d) {
  switch (d) {
    case DgpName::dgp1: return "dgp1";
    case DgpName::dgp2: return "dgp2";
    case DgpName::dgp2_null: return "dgp2_null";
  }
  return "?";
}

inline DgpName parse_dgp(const std::string& s) {
  if (s == "dgp1") return DgpName::dgp1;
  if (s == "dgp2") return DgpName::dgp2;
  if (s == "dgp2_null") return DgpName::dgp2_null;
  throw ConfigError("unknown dgp '" + s + "'");
}

struct DgpSpec {
  DgpName name = DgpName::dgp1;
  std::size_t n = 100;
  std::uint64_t seed = 1;
  /// Spread of W1 in the calibrated designs, read as a standard deviation.
  double w1_sd = 5.7;

  void check() const {
    if (n < 10) throw ConfigError("dgp sample size must be at least 10");
    if (!(w1_sd > 0.0)) throw ConfigError("w1_sd must be positive");
  }
};

namespace dgp {

inline int n_covariates(DgpName d) { return d == DgpName::dgp1 ? 3 : 4; }

inline void draw_covariates(DgpName d, double w1_sd, Rng& rng, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> w) {
  if (d == DgpName::dgp1) {
    w[0] = std::normal_distribution<double>(3.0, 1.0)(rng);
    w[1] = std::bernoulli_distribution(0.6)(rng);
    w[2] = std::bernoulli_distribution(0.3)(rng);
  } else {
    w[0] = std::normal_distribution<double>(26.6, w1_sd)(rng);
    w[1] = std::poisson_distribution<int>(40.0)(rng);
    w[2] = std::bernoulli_distribution(0.4)(rng);
    w[3] = std::bernoulli_distribution(0.3)(rng);
  }
}

inline double exposure_mean(DgpName d, RowRef w) {
  if (d == DgpName::dgp1) return 2.0 * (w[1] + w[2]);
  return -1.37 + 0.004 * w[0] + 0.015 * w[1] + 0.05 * w[2] + 0.25 * w[3];
}

inline double exposure_sd(DgpName d) { return d == DgpName::dgp1 ? 1.0 : 0.2; }

/// P(Y = 1 | A = a, W = w).
inline double outcome_prob(DgpName d, double a, RowRef w) {
  switch (d) {
    case DgpName::dgp1: return expit((w[0] + w[1] + w[2]) / 3.0 - a);
    case DgpName::dgp2:
      return expit(-2.9 - 0.0013 * w[0] - 0.0016 * w[1] + 0.0678 * w[2] + 0.039 * w[3] - 0.033 * a);
    case DgpName::dgp2_null:
      return expit(-2.8 - 0.0013 * w[0] - 0.0016 * w[1] + 0.0678 * w[2] + 0.039 * w[3]);
  }
  return 0.0;
}

/// P(C = 1 | Y = y, W = w).
inline double sampling_prob(DgpName d, double y, RowRef w) {
  if (d == DgpName::dgp1) return expit((w[0] + w[1] + w[2]) / 3.0 - y);
  if (y == 1.0) return 1.0;
  return expit(-2.45 - 0.027 * w[0] + 0.012 * w[1] + 0.39 * w[2] + 0.166 * w[3]);
}

}  // namespace dgp

struct SimDraw {
  ObservedDataset data;
  /// Exposure for every row, including those the design leaves unmeasured.
  Eigen::VectorXd full_exposure;
};

inline SimDraw generate(const DgpSpec& spec) {
  spec.check();
  Rng rng(spec.seed);
  const auto n = static_cast<Eigen::Index>(spec.n);
  Eigen::MatrixXd W(n, dgp::n_covariates(spec.name));
  Eigen::VectorXd a(n), y(n);
  std::vector<int> c(spec.n);
  std::vector<std::optional<double>> a_obs(spec.n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dgp::draw_covariates(spec.name, spec.w1_sd, rng, W.row(i));
    a[i] = std::normal_distribution<double>(dgp::exposure_mean(spec.name, W.row(i)), dgp::exposure_sd(spec.name))(rng);
    y[i] = std::bernoulli_distribution(dgp::outcome_prob(spec.name, a[i], W.row(i)))(rng);
    const double pc = dgp::sampling_prob(spec.name, y[i], W.row(i));
    // Draw even when pc = 1 so the stream does not depend on the outcome.
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    c[static_cast<std::size_t>(i)] = u < pc ? 1 : 0;
    if (c[static_cast<std::size_t>(i)] == 1) a_obs[static_cast<std::size_t>(i)] = a[i];
  }
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < W.cols(); ++j) names.push_back("w" + std::to_string(j + 1));
  return SimDraw{ObservedDataset(std::move(W), std::move(a_obs), std::move(c), std::move(y), std::move(names)),
                 std::move(a)};
}

struct TruthEstimate {
  double psi = 0.0;
  double mc_se = 0.0;
  std::size_t draws = 0;
};

/// Monte Carlo mean of P(Y = 1 | A + delta, W) with (W, A) drawn from the
/// design's covariate and exposure laws. No support truncation.
inline TruthEstimate true_psi(DgpName name, double delta, std::size_t draws, std::uint64_t seed, double w1_sd = 5.7) {
  if (draws < 2) throw ConfigError("true_psi needs at least 2 draws");
  Rng rng(seed);
  Eigen::RowVectorXd w(dgp::n_covariates(name));
  // Welford accumulation keeps the variance accurate at large M.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    dgp::draw_covariates(name, w1_sd, rng, w);
    const double a = std::normal_distribution<double>(dgp::exposure_mean(name, w), dgp::exposure_sd(name))(rng);
    const double p = dgp::outcome_prob(name, a + delta, w);
    const double d = p - mean;
    mean += d / static_cast<double>(k + 1);
    m2 += d * (p - mean);
  }
  const double var = m2 / static_cast<double>(draws - 1);
  return {mean, std::sqrt(var / static_cast<double>(draws)), draws};
}

// ---------------------------------------------------------------------------
// Replication driver

struct StudyConfig {
  DgpName dgp = DgpName::dgp1;
  double w1_sd = 5.7;
  std::vector<std::size_t> sample_sizes{100};
  std::vector<double> deltas{0.5};
  int reps = 10;
  std::vector<Variant> variants{Variant::onestep, Variant::tmle};
  EstimateOptions estimate;
  std::size_t truth_draws = 1000000;
  std::uint64_t seed = 20201019;
  int workers = 1;
  /// Highest tolerated share of failed replications per cell.
  double max_failure_rate = 0.05;

  void check() const {
    if (reps < 1) throw ConfigError("reps must be >= 1");
    if (sample_sizes.empty()) throw ConfigError("sample_sizes must not be empty");
    if (deltas.empty()) throw ConfigError("deltas must not be empty");
    if (variants.empty()) throw ConfigError("variants must not be empty");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    for (auto n : sample_sizes) {
      if (n < 10) throw ConfigError("sample sizes must be >= 10");
    }
  }
};

struct RepRecord {
  Variant variant = Variant::onestep;
  std::size_t n = 0;
  double delta = 0.0;
  int rep = 0;
  double psi_hat = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double truth = 0.0;
  bool covered = false;
  bool ok = true;
  std::string error;
};

struct MetricsRow {
  Variant variant = Variant::onestep;
  std::size_t n = 0;
  double delta = 0.0;
  double sqrt_n_bias = 0.0;
  double n_mse = 0.0;
  double coverage = 0.0;
  double mean_ci_width = 0.0;
  int reps_used = 0;
  int reps_failed = 0;
};

struct StudyResult {
  std::vector<RepRecord> raw;
  std::vector<MetricsRow> metrics;
  std::map<double, TruthEstimate> truths;
};

/// Aggregate one (variant, n, delta) cell; failed records are skipped.
inline MetricsRow summarize(const std::vector<RepRecord>& records) {
  MetricsRow m;
  if (records.empty()) return m;
  m.variant = records.front().variant;
  m.n = records.front().n;
  m.delta = records.front().delta;
  double sum = 0.0, sq = 0.0, width = 0.0, cover = 0.0;
  for (const auto& r : records) {
    if (!r.ok) {
      ++m.reps_failed;
      continue;
    }
    ++m.reps_used;
    sum += r.psi_hat - r.truth;
    sq += (r.psi_hat - r.truth) * (r.psi_hat - r.truth);
    width += r.ci_hi - r.ci_lo;
    cover += r.covered ? 1.0 : 0.0;
  }
  if (m.reps_used == 0) return m;
  const double k = m.reps_used;
  const double n = static_cast<double>(m.n);
  m.sqrt_n_bias = std::sqrt(n) * sum / k;
  m.n_mse = n * sq / k;
  m.coverage = cover / k;
  m.mean_ci_width = width / k;
  return m;
}

inline std::uint64_t truth_seed(std::uint64_t master, double delta) {
  return derive_seed(master, {0x7472757468ULL, std::bit_cast<std::uint64_t>(delta)});
}

/// Every (n, rep) task draws its data and fits its nuisances from seeds
/// derived from (master seed, n, rep), and results land in fixed slots, so the
/// output does not depend on the worker count or scheduling.
inline StudyResult run_study(const StudyConfig& cfg,
                             const std::function<void(std::size_t done, std::size_t total)>& progress = {}) {
  cfg.check();
  StudyResult out;
  for (double d : cfg.deltas) out.truths[d] = true_psi(cfg.dgp, d, cfg.truth_draws, truth_seed(cfg.seed, d), cfg.w1_sd);

  struct Task {
    std::size_t n;
    int rep;
  };
  std::vector<Task> tasks;
  for (auto n : cfg.sample_sizes) {
    for (int r = 0; r < cfg.reps; ++r) tasks.push_back({n, r});
  }
  const std::size_t per_task = cfg.deltas.size() * cfg.variants.size();
  std::vector<RepRecord> slots(tasks.size() * per_task);

  auto run_task = [&](std::size_t t) {
    const Task task = tasks[t];
    RepRecord* rec = &slots[t * per_task];
    std::size_t k = 0;
    for (double d : cfg.deltas) {
      for (auto v : cfg.variants) {
        rec[k].variant = v;
        rec[k].n = task.n;
        rec[k].delta = d;
        rec[k].rep = task.rep;
        rec[k].truth = out.truths.at(d).psi;
        ++k;
      }
    }
    auto fail_all = [&](const std::string& msg) {
      for (std::size_t j = 0; j < per_task; ++j) {
        rec[j].ok = false;
        rec[j].error = msg;
      }
    };
    try {
      DgpSpec spec{cfg.dgp, task.n, derive_seed(cfg.seed, {task.n, static_cast<std::uint64_t>(task.rep), 0}), cfg.w1_sd};
      const SimDraw draw = generate(spec);
      EstimateOptions opts = cfg.estimate;
      opts.nuisance.seed = derive_seed(cfg.seed, {task.n, static_cast<std::uint64_t>(task.rep), 1});
      Estimator est(draw.data, opts);
      k = 0;
      for (double d : cfg.deltas) {
        for (auto v : cfg.variants) {
          try {
            const EstimateResult r = est.run(d, v);
            rec[k].psi_hat = r.psi;
            rec[k].se = r.se;
            rec[k].ci_lo = r.ci_lo;
            rec[k].ci_hi = r.ci_hi;
            rec[k].covered = r.ci_lo <= rec[k].truth && rec[k].truth <= r.ci_hi;
            if (!std::isfinite(r.psi) || !std::isfinite(r.se)) {
              rec[k].ok = false;
              rec[k].error = "non-finite estimate";
            }
          } catch (const std::exception& e) {
            rec[k].ok = false;
            rec[k].error = e.what();
          }
          ++k;
        }
      }
    } catch (const std::exception& e) {
      fail_all(e.what());
    }
  };

  std::atomic<std::size_t> next{0}, done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      run_task(t);
      const std::size_t finished = ++done;
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        progress(finished, tasks.size());
      }
    }
  };
  const int nthreads = std::min<int>(cfg.workers, static_cast<int>(tasks.size()));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Records ordered (n, delta, variant, rep) for output.
  for (auto n : cfg.sample_sizes) {
    for (std::size_t di = 0; di < cfg.deltas.size(); ++di) {
      for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
        std::vector<RepRecord> cell;
        for (std::size_t t = 0; t < tasks.size(); ++t) {
          if (tasks[t].n != n) continue;
          cell.push_back(slots[t * per_task + di * cfg.variants.size() + vi]);
        }
        out.metrics.push_back(summarize(cell));
        out.raw.insert(out.raw.end(), cell.begin(), cell.end());
      }
    }
  }
  return out;
}

/// Throws when any cell lost more than the tolerated share of replications.
inline void check_failure_rate(const StudyResult& result, const StudyConfig& cfg) {
  for (const auto& m : result.metrics) {
    const int total = m.reps_used + m.reps_failed;
    if (total > 0 && static_cast<double>(m.reps_failed) > cfg.max_failure_rate * total) {
      std::string first;
      for (const auto& r : result.raw) {
        if (!r.ok && r.variant == m.variant && r.n == m.n && r.delta == m.delta) {
          first = r.error;
          break;
        }
      }
      throw FitError(std::string("study: ") + to_string(m.variant) + " at n=" + std::to_string(m.n) + ", delta=" +
                     format_double(m.delta) + " failed in " + std::to_string(m.reps_failed) + "/" +
                     std::to_string(total) + " replications (first error: " + first + ")");
    }
  }
}

inline void write_raw_csv(const std::vector<RepRecord>& raw, std::ostream& out) {
  out << "variant,n,delta,rep,psi_hat,se,ci_lo,ci_hi,truth,covered\n";
  for (const auto& r : raw) {
    if (!r.ok) continue;
    out << to_string(r.variant) << ',' << r.n << ',' << format_double(r.delta) << ',' << r.rep << ','
        << format_double(r.psi_hat) << ',' << format_double(r.se) << ',' << format_double(r.ci_lo) << ','
        << format_double(r.ci_hi) << ',' << format_double(r.truth) << ',' << (r.covered ? 1 : 0) << '\n';
  }
}

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, std::ostream& out) {
  out << "variant,n,delta,sqrt_n_bias,n_mse,coverage,mean_ci_width,reps_used\n";
  for (const auto& m : rows) {
    out << to_string(m.variant) << ',' << m.n << ',' << format_double(m.delta) << ',' << format_double(m.sqrt_n_bias)
        << ',' << format_double(m.n_mse) << ',' << format_double(m.coverage) << ','
        << format_double(m.mean_ci_width) << ',' << m.reps_used << '\n';
  }
}

}  // namespace tpshift

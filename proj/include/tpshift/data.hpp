#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tpshift/errors.hpp"
#include "tpshift/format.hpp"

namespace tpshift {

using RowRef = Eigen::Ref<const Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

struct OutcomeScaling {
  double lo = 0.0;
  double hi = 1.0;
  bool applied = false;

  double to_original(double y) const { return applied ? lo + y * (hi - lo) : y; }
};

/// Two-phase sample (W, C, C*A, Y). Immutable once constructed; the
/// constructor enforces every invariant so a live object is always valid.
///
/// The exposure is held as std::optional and is disengaged exactly on rows
/// with C = 0. Reading it there throws instead of returning a placeholder.
class ObservedDataset {
 public:
  ObservedDataset(Eigen::MatrixXd covariates, std::vector<std::optional<double>> exposure,
                  std::vector<int> sampled, Eigen::VectorXd outcome,
                  std::vector<std::string> covariate_names = {}, OutcomeScaling scaling = {},
                  std::vector<std::size_t> ids = {})
      : w_(std::move(covariates)),
        a_(std::move(exposure)),
        y_(std::move(outcome)),
        names_(std::move(covariate_names)),
        scaling_(scaling),
        ids_(std::move(ids)) {
    const auto n = static_cast<std::size_t>(w_.rows());
    if (a_.size() != n || sampled.size() != n || static_cast<std::size_t>(y_.size()) != n) {
      throw DataError("dataset columns have inconsistent lengths");
    }
    if (n < 2) throw DataError("dataset needs at least 2 rows");
    if (names_.empty()) {
      for (Eigen::Index j = 0; j < w_.cols(); ++j) names_.push_back("w" + std::to_string(j + 1));
    }
    if (static_cast<Eigen::Index>(names_.size()) != w_.cols()) {
      throw DataError("covariate name count does not match covariate columns");
    }
    if (ids_.empty()) {
      ids_.resize(n);
      for (std::size_t i = 0; i < n; ++i) ids_[i] = i;
    }
    if (!w_.allFinite()) throw DataError("non-finite covariate value");
    c_.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = std::to_string(i + 1);
      if (sampled[i] != 0 && sampled[i] != 1) throw DataError("c not in {0,1} at row " + row);
      c_[static_cast<Eigen::Index>(i)] = sampled[i];
      const double y = y_[static_cast<Eigen::Index>(i)];
      if (!std::isfinite(y)) throw DataError("non-finite outcome at row " + row);
      if (y < 0.0 || y > 1.0) throw DataError("outcome outside [0,1] at row " + row);
      if (sampled[i] == 1) {
        if (!a_[i]) throw DataError("A missing in second-phase row " + row);
        if (!std::isfinite(*a_[i])) throw DataError("non-finite exposure at row " + row);
        phase2_.push_back(i);
      } else {
        a_[i].reset();
      }
    }
    if (phase2_.empty()) throw DataError("no second-phase rows (all c = 0)");
  }

  std::size_t size() const { return a_.size(); }
  Eigen::Index n_covariates() const { return w_.cols(); }
  std::size_t phase2_count() const { return phase2_.size(); }

  const Eigen::MatrixXd& covariates() const { return w_; }
  RowRef covariate_row(std::size_t i) const { return w_.row(static_cast<Eigen::Index>(i)); }
  const Eigen::VectorXd& outcome() const { return y_; }
  double outcome(std::size_t i) const { return y_[static_cast<Eigen::Index>(i)]; }
  /// C as a 0/1 real vector.
  const Eigen::VectorXd& sampled() const { return c_; }
  bool in_phase2(std::size_t i) const { return c_[static_cast<Eigen::Index>(i)] == 1.0; }

  double exposure(std::size_t i) const {
    if (!a_.at(i)) {
      throw std::logic_error("exposure read on row " + std::to_string(i + 1) +
                             " which is not in the second-phase sample");
    }
    return *a_[i];
  }
  const std::optional<double>& exposure_or_missing(std::size_t i) const { return a_.at(i); }

  const std::vector<std::size_t>& phase2_rows() const { return phase2_; }
  const std::vector<std::size_t>& ids() const { return ids_; }
  const std::vector<std::string>& covariate_names() const { return names_; }
  const OutcomeScaling& outcome_scaling() const { return scaling_; }

  Eigen::VectorXd phase2_exposure() const {
    Eigen::VectorXd a(static_cast<Eigen::Index>(phase2_.size()));
    for (std::size_t k = 0; k < phase2_.size(); ++k) a[static_cast<Eigen::Index>(k)] = *a_[phase2_[k]];
    return a;
  }

  Eigen::MatrixXd phase2_covariates() const {
    Eigen::MatrixXd w(static_cast<Eigen::Index>(phase2_.size()), w_.cols());
    for (std::size_t k = 0; k < phase2_.size(); ++k) {
      w.row(static_cast<Eigen::Index>(k)) = w_.row(static_cast<Eigen::Index>(phase2_[k]));
    }
    return w;
  }

  /// The C = 1 rows only, as a dataset in which every row is sampled.
  ObservedDataset phase2_subset() const {
    std::vector<std::optional<double>> a;
    std::vector<std::size_t> ids;
    Eigen::VectorXd y(static_cast<Eigen::Index>(phase2_.size()));
    for (std::size_t k = 0; k < phase2_.size(); ++k) {
      a.push_back(a_[phase2_[k]]);
      ids.push_back(ids_[phase2_[k]]);
      y[static_cast<Eigen::Index>(k)] = y_[static_cast<Eigen::Index>(phase2_[k])];
    }
    return ObservedDataset(phase2_covariates(), std::move(a), std::vector<int>(phase2_.size(), 1),
                           std::move(y), names_, scaling_, std::move(ids));
  }

 private:
  Eigen::MatrixXd w_;
  std::vector<std::optional<double>> a_;
  Eigen::VectorXd c_;
  Eigen::VectorXd y_;
  std::vector<std::string> names_;
  OutcomeScaling scaling_;
  std::vector<std::size_t> ids_;
  std::vector<std::size_t> phase2_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
    while (!c.empty() && c.front() == ' ') c.erase(c.begin());
  }
  return cells;
}

inline RawTable read_csv(std::istream& in) {
  RawTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      first = false;
      table.header = split_csv_line(line);
      continue;
    }
    if (line.empty() || line == "\r") continue;
    table.rows.push_back(split_csv_line(line));
  }
  if (table.header.empty()) throw DataError("empty CSV (no header row)");
  return table;
}

inline RawTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_csv(in);
}

struct ValidateOptions {
  /// Min-max scale the outcome into [0,1] instead of rejecting values outside it.
  bool scale_outcome = false;
};

/// Build a dataset from a table with header `w1,...,wp,a,y,c` (covariate
/// columns are every column other than a, y, c, in file order).
inline ObservedDataset validate(const RawTable& table, const ValidateOptions& opts = {}) {
  auto find = [&](const std::string& name) -> std::size_t {
    auto it = std::find(table.header.begin(), table.header.end(), name);
    if (it == table.header.end()) throw DataError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - table.header.begin());
  };
  const std::size_t ia = find("a");
  const std::size_t iy = find("y");
  const std::size_t ic = find("c");
  std::vector<std::size_t> wcols;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (j != ia && j != iy && j != ic) {
      wcols.push_back(j);
      names.push_back(table.header[j]);
    }
  }
  const std::size_t n = table.rows.size();
  Eigen::MatrixXd w(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(wcols.size()));
  std::vector<std::optional<double>> a(n);
  std::vector<int> c(n);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = table.rows[i];
    const auto where = " at row " + std::to_string(i + 1);
    if (row.size() != table.header.size()) throw DataError("wrong number of cells" + where);
    double v = 0.0;
    for (std::size_t k = 0; k < wcols.size(); ++k) {
      if (!parse_double(row[wcols[k]], v)) {
        throw DataError("unparseable covariate '" + table.header[wcols[k]] + "'" + where);
      }
      w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v;
    }
    if (!parse_double(row[ic], v) || (v != 0.0 && v != 1.0)) throw DataError("c not in {0,1}" + where);
    c[i] = static_cast<int>(v);
    if (!parse_double(row[iy], v)) throw DataError("unparseable outcome" + where);
    y[static_cast<Eigen::Index>(i)] = v;
    if (!opts.scale_outcome && (v < 0.0 || v > 1.0)) throw DataError("outcome outside [0,1]" + where);
    if (row[ia].empty()) {
      if (c[i] == 1) throw DataError("A missing in second-phase row " + std::to_string(i + 1));
    } else if (c[i] == 1) {
      if (!parse_double(row[ia], v)) throw DataError("unparseable exposure" + where);
      a[i] = v;
    }
  }
  OutcomeScaling scaling;
  if (opts.scale_outcome && n > 0) {
    scaling.lo = y.minCoeff();
    scaling.hi = y.maxCoeff();
    scaling.applied = true;
    if (!(scaling.hi > scaling.lo)) throw DataError("constant outcome cannot be scaled");
    y = (y.array() - scaling.lo) / (scaling.hi - scaling.lo);
  }
  return ObservedDataset(std::move(w), std::move(a), std::move(c), std::move(y), std::move(names),
                         scaling);
}

/// Inverse of validate for unscaled data: header `w...,a,y,c`, empty `a` on c=0 rows.
inline void write_csv(const ObservedDataset& data, std::ostream& out) {
  for (const auto& name : data.covariate_names()) out << name << ',';
  out << "a,y,c\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.n_covariates(); ++j) {
      out << format_double(data.covariates()(static_cast<Eigen::Index>(i), j)) << ',';
    }
    if (const auto& a = data.exposure_or_missing(i)) out << format_double(*a);
    out << ',' << format_double(data.outcome_scaling().to_original(data.outcome(i))) << ','
        << (data.in_phase2(i) ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Shift intervention

enum class SupportMode { empirical_max, density_threshold, unbounded };

struct ShiftSpec {
  double delta = 0.0;
  SupportMode support_mode = SupportMode::empirical_max;
  double density_eps = 1e-3;

  void check() const {
    if (!std::isfinite(delta)) throw ConfigError("shift delta must be finite");
    if (!(density_eps > 0.0 && density_eps < 1.0)) throw ConfigError("density_eps must lie in (0,1)");
  }
};

/// Upper support bound u(w) of the exposure given covariates.
class SupportBound {
 public:
  static SupportBound constant(double u) { return SupportBound(u); }
  static SupportBound unbounded() { return SupportBound(std::numeric_limits<double>::infinity()); }
  explicit SupportBound(std::function<double(RowRef)> fn) : fn_(std::move(fn)) {}

  double at(RowRef w) const { return fn_ ? fn_(w) : constant_; }
  bool is_constant() const { return !fn_; }

 private:
  explicit SupportBound(double u) : constant_(u) {}
  std::function<double(RowRef)> fn_;
  double constant_ = std::numeric_limits<double>::infinity();
};

/// d(a, w): a + delta when that stays within the support bound, else a.
inline double shift(double a, RowRef w, const ShiftSpec& spec, const SupportBound& bound) {
  const double shifted = a + spec.delta;
  return shifted <= bound.at(w) ? shifted : a;
}

/// Support bound that needs only the data. density_threshold mode needs a
/// fitted exposure density; see support_bound_from_density in density.hpp.
inline SupportBound estimate_support_bound(const ObservedDataset& data, const ShiftSpec& spec) {
  switch (spec.support_mode) {
    case SupportMode::empirical_max: {
      if (data.phase2_count() == 0) throw DataError("no second-phase rows");
      return SupportBound::constant(data.phase2_exposure().maxCoeff());
    }
    case SupportMode::unbounded:
      return SupportBound::unbounded();
    case SupportMode::density_threshold:
      throw ConfigError("density_threshold support bound requires a fitted density model");
  }
  return SupportBound::unbounded();
}

}  // namespace tpshift

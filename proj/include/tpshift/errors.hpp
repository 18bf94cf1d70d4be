#pragma once

#include <stdexcept>
#include <string>

namespace tpshift {

/// Invalid or inconsistent input data (bad CSV, out-of-range values).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model could not be fitted (rank deficiency, degenerate variance, ...).
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed configuration or model document.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tpshift

#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace idgnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An iterative solver ran out of iterations. Carries the residual history
/// and, where meaningful, the last estimate it produced.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> residuals,
                   double last_estimate = 0.0)
      : Error(what), residuals_(std::move(residuals)), last_estimate_(last_estimate) {}

  const std::vector<double>& residuals() const noexcept { return residuals_; }
  double last_estimate() const noexcept { return last_estimate_; }

 private:
  std::vector<double> residuals_;
  double last_estimate_;
};

/// Dataset ingestion failure; names the offending file.
class DataError : public Error {
 public:
  enum class Kind { kMissingFile, kShapeMismatch, kNonFinite, kParse };

  DataError(Kind kind, std::string file, const std::string& detail)
      : Error(describe(kind) + " in '" + file + "': " + detail), kind_(kind), file_(std::move(file)) {}

  Kind kind() const noexcept { return kind_; }
  const std::string& file() const noexcept { return file_; }

 private:
  static std::string describe(Kind kind) {
    switch (kind) {
      case Kind::kMissingFile: return "missing file";
      case Kind::kShapeMismatch: return "shape mismatch";
      case Kind::kNonFinite: return "non-finite value";
      case Kind::kParse: return "parse error";
    }
    return "data error";
  }

  Kind kind_;
  std::string file_;
};

/// A metric is not defined for the given input (e.g. AUC with one class).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

}  // namespace idgnn

#pragma once

#include <stdexcept>
#include <string>

namespace fttnn {

/// Precondition violated by the caller (bad shapes, empty inputs, bad orders).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A request would exceed a hard memory/size guard.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient, degenerate Rayleigh denominator, and similar.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateModel : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

/// Problem data outside what the TT assembly can represent.
class UnsupportedProblem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Metric is undefined for the given inputs (e.g. zero reference norm).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Configuration error tied to a field path such as "model.ranks".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace fttnn

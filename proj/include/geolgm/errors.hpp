#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace geolgm {

// Exit codes follow the CLI contract: 2 config, 3 data, 4 numerical,
// 5 budget/resource.
enum class ErrorKind { kConfig = 2, kData = 3, kNumerical = 4, kResource = 5 };

/// Base of every error raised by the library. `error_class()` is a short
/// dotted identifier (e.g. "numerical.not_spd") that the CLI prints verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string error_class, const std::string& message)
      : std::runtime_error(message),
        kind_(kind),
        error_class_(std::move(error_class)) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }
  const std::string& error_class() const noexcept { return error_class_; }

 private:
  ErrorKind kind_;
  std::string error_class_;
};

struct ConfigError : Error {
  ConfigError(std::string cls, const std::string& msg)
      : Error(ErrorKind::kConfig, "config." + std::move(cls), msg) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& msg)
      : Error(ErrorKind::kData, "data.domain", msg) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& msg)
      : Error(ErrorKind::kData, "data.format", msg) {}
};

struct DegenerateCovariateError : Error {
  explicit DegenerateCovariateError(const std::string& msg)
      : Error(ErrorKind::kData, "data.degenerate_covariate", msg) {}
};

struct GeometryError : Error {
  explicit GeometryError(const std::string& msg)
      : Error(ErrorKind::kNumerical, "numerical.geometry", msg) {}
};

struct AssemblyError : Error {
  explicit AssemblyError(const std::string& msg)
      : Error(ErrorKind::kNumerical, "numerical.assembly", msg) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& msg)
      : Error(ErrorKind::kNumerical, "numerical.not_spd", msg) {}
};

/// Inner Newton failed to reach the step tolerance.
struct ConvergenceError : Error {
  ConvergenceError(const std::string& msg, double gradient_norm)
      : Error(ErrorKind::kNumerical, "numerical.no_convergence", msg),
        last_gradient_norm(gradient_norm) {}
  double last_gradient_norm;
};

struct ResourceError : Error {
  explicit ResourceError(const std::string& msg)
      : Error(ErrorKind::kResource, "resource.limit", msg) {}
};

/// Evaluation budget exhausted; carries the best point found so far.
struct BudgetError : Error {
  BudgetError(const std::string& msg, std::vector<double> best, double best_value)
      : Error(ErrorKind::kResource, "resource.budget", msg),
        best_point(std::move(best)),
        best_value(best_value) {}
  std::vector<double> best_point;
  double best_value;
};

}  // namespace geolgm

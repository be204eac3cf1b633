#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace consensus {

// Root of every error thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed numerical input (negative interaction, NaN, bad weight).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Bad run configuration: parse failures, unstable step sizes, non-stochastic
// iteration matrices.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ConnectivityError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Solver did not converge, or a numerical contract (residual, orthogonality)
// could not be met.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// The solved weight has a coordinate at or below the positivity floor.
class NumericalDegeneracy : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// A monitored trajectory invariant was violated beyond its slack.
class IntegrityError : public NumericalError {
 public:
  IntegrityError(const std::string& what, std::size_t step)
      : NumericalError(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace consensus

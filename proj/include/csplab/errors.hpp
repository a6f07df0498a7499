#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace csplab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: a precondition, an invariant or a configuration check failed.
/// The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The computation itself failed (blow-up, quadrature trouble, ...).
/// The CLI maps these to exit code 2.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

class SingularityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UnusableTrajectoryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A lemma-lab construction is impossible at the requested resolution.
class ConstructionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class QuadratureError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class EmbeddingDefectError : public RuntimeFailure {
 public:
  EmbeddingDefectError(double defect, const std::string& what)
      : RuntimeFailure(what), defect_(defect) {}
  double defect() const noexcept { return defect_; }

 private:
  double defect_;
};

class BlowUpError : public RuntimeFailure {
 public:
  BlowUpError(std::size_t step, double max_value, double lambda,
              const std::string& what)
      : RuntimeFailure(what), step_(step), max_value_(max_value),
        lambda_(lambda) {}
  std::size_t step() const noexcept { return step_; }
  double max_value() const noexcept { return max_value_; }
  double lambda() const noexcept { return lambda_; }

 private:
  std::size_t step_;
  double max_value_;
  double lambda_;
};

}  // namespace csplab

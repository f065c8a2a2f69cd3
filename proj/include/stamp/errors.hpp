#pragma once

#include <stdexcept>
#include <string>

namespace stamp {

// Input that violates a documented contract (bad files, bad flags, broken
// invariants). The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failures of the numerical machinery. The CLI maps these to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularOmega : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class MissingMoment : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NonFiniteLikelihood : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class IdentifiabilityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class InsufficientCases : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SeparationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace stamp

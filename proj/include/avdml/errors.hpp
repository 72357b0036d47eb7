#pragma once

#include <stdexcept>
#include <string>

namespace avdml {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument or configuration value.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Nuisance evaluation outside the range a score accepts.
class NuisanceError : public Error {
 public:
  using Error::Error;
};

// Score requested for an observation that lacks a field the estimand needs.
class EstimandError : public Error {
 public:
  using Error::Error;
};

// Singular Jacobian; carries the smallest singular value that tripped it.
class IdentificationError : public Error {
 public:
  IdentificationError(const std::string& what, double smallest_singular_value)
      : Error(what), smallest_singular_value_(smallest_singular_value) {}
  double smallest_singular_value() const noexcept { return smallest_singular_value_; }

 private:
  double smallest_singular_value_;
};

class FitError : public Error {
 public:
  using Error::Error;
};

// Observation does not match the stream schema.
class IngestError : public Error {
 public:
  using Error::Error;
};

// Stream cannot produce an interval yet (before burn-in, or a fold lacks data).
class NotReadyError : public Error {
 public:
  using Error::Error;
};

// Two streams combined at different sample sizes.
class SyncError : public Error {
 public:
  using Error::Error;
};

// Finite-support distribution produced a non-finite expectation.
class DgpError : public Error {
 public:
  using Error::Error;
};

}  // namespace avdml

#pragma once

#include <stdexcept>
#include <string>

namespace semcal {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data or configuration is malformed. The CLI maps this to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// The entailment oracle could not answer (missing cache entry, remote failure).
class OracleError : public Error {
 public:
  using Error::Error;
};

// A metric is mathematically undefined for the given input (single class, zero variance).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

// An optimizer produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace semcal

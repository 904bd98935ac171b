#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace envi {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A Cholesky factorization failed even after jitter escalation.
class FactorizationError : public Error {
 public:
  FactorizationError(const std::string& what, std::int64_t pivot)
      : Error(what + " (failing pivot " + std::to_string(pivot) + ")"), pivot_(pivot) {}

  std::int64_t pivot() const noexcept { return pivot_; }

 private:
  std::int64_t pivot_;
};

// NaN/Inf, negative variances and similar numerical breakdowns.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Misuse of the differentiation tape (non-scalar root, double backward).
class TapeError : public Error {
 public:
  using Error::Error;
};

// Malformed input files, unknown config keys.
class InputError : public Error {
 public:
  using Error::Error;
};

// A file that could not be opened or read at all.
class IoError : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace envi

#pragma once

#include <stdexcept>
#include <string>

namespace spa {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input outside the domain of an operation (empty cloud, k > P, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A quaternion that is not unit-norm within tolerance.
class InvalidPoseError : public Error {
 public:
  using Error::Error;
};

// Object exceeds the configured model capacity (N_max / M_max).
class CapacityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite value encountered during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace spa

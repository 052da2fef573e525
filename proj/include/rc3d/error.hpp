#pragma once

#include <stdexcept>
#include <string>

namespace rc3d {

// Base for every error the library reports. The CLI maps ConfigError and
// UsageError to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes, hyperparameters or specs that violate a documented constraint.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller misuse of an API (non-scalar loss, tape reused without reset, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Bad input data: label ids out of range, misaligned volumes, bad files.
class InputError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf appeared in a tensor.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rc3d

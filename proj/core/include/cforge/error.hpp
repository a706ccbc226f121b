#pragma once

#include <stdexcept>
#include <string>

namespace cforge {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied data that violates an operation's preconditions
// (dimension mismatch, empty set, unknown id, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Optimisation diverged (NaN/Inf in a loss, gradient or parameter).
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Geometry or statistics cannot be computed for the given data
// (collinear cloud, zero-norm CAV, identical classes, ...).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// An artifact does not belong to the upstream artifact it claims.
class HashMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace cforge

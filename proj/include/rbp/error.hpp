#pragma once

#include <stdexcept>
#include <string>

namespace rbp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents or layer wiring disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad user input: config values, CLI flags, incompatible checkpoints.
// The CLI maps this family to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced during a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Missing, truncated or malformed dataset / checkpoint files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on an object in the wrong lifecycle state
// (e.g. sampling a folded gate).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace rbp

#pragma once

#include <stdexcept>
#include <string>

namespace mddc {

// Base for all errors raised by the library. Callers that only need a
// message catch std::exception; the subclasses let tests and the CLI
// distinguish input problems from numerical failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are inconsistent with an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition on a scalar argument or configuration value is violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced during optimisation or training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mddc

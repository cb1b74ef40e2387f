#pragma once

#include <stdexcept>
#include <string>

namespace harvim {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between operands.
struct ShapeError : Error {
  using Error::Error;
};

/// Operand outside an operation's mathematical domain (log of a
/// non-positive value, division by zero, beta <= 0, ...).
struct DomainError : Error {
  using Error::Error;
};

/// Non-finite value produced, or an iterative solve diverged.
struct NumericalError : Error {
  using Error::Error;
};

/// Bad configuration file, CLI flag, or parameter range.
struct ConfigError : Error {
  using Error::Error;
};

/// File could not be read, written, or decoded.
struct IoError : Error {
  using Error::Error;
};

}  // namespace harvim

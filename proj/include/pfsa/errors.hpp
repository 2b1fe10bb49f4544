#pragma once

#include <stdexcept>
#include <string>

namespace pfsa {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value violates an invariant (bad stripe count, non-integral conv output, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An API contract was broken by the caller, e.g. a tape handed to the wrong backward.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content or file name.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace pfsa

#pragma once

#include <stdexcept>
#include <string>

namespace satqa {

// Base for every error raised by the library. The CLI maps subclasses onto
// process exit codes (config-like errors -> 2, numeric failures -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid, inconsistent or missing configuration (unknown family, bad preset,
// shape mismatch between presets, missing upstream artifact).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Argument outside its mathematical domain (level out of range, tau <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation's precondition (length mismatch, anchor without
// positives).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite activations, losses or metric inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Correlation metrics given fewer than three points or a constant vector.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

}  // namespace satqa

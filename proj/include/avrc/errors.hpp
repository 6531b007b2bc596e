#pragma once

#include <stdexcept>
#include <string>

namespace avrc {

// Every library failure derives from Error so callers can map the category
// onto a process exit code (see tools/avrc.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition broken by the caller: mismatched shapes, bad indices, ...
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Input data that cannot be used as-is (NaN/Inf, malformed files).
class InvalidData : public Error {
 public:
  using Error::Error;
};

/// A full-column-rank design was required but not supplied.
class RankDeficiency : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown (non-PSD covariance, failed factorisation).
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// Malformed or unknown configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace avrc

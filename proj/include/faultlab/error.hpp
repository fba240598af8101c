#pragma once

#include <stdexcept>
#include <string>

namespace faultlab {

// Exception hierarchy. The CLI maps each family onto its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration: unknown keys, out-of-range parameters, invalid arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data (CSV schema, checkpoint, frame files, I/O).
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf, divergence, degenerate numerical input.
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace faultlab

#pragma once

#include <stdexcept>
#include <string>

namespace ssvd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or map shapes that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent or unsupported configuration (layer geometry, pipeline
/// settings, input sizes the architecture cannot accept).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, unreadable or malformed files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Domain values that violate a type invariant (boxes, scene specs).
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssvd

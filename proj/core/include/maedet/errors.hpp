#pragma once

#include <stdexcept>
#include <string>

namespace maedet {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape or dimension mismatch.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Bad parameter or configuration value.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Dataset, annotation or image file problems.
class DataError : public Error {
public:
  using Error::Error;
};

/// Checkpoint files that are missing, corrupt or incompatible.
class CheckpointError : public Error {
public:
  using Error::Error;
};

}  // namespace maedet

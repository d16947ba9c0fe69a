#pragma once

#include <stdexcept>
#include <string>

namespace tdc {

// Base for all library errors. Subclasses map onto CLI exit codes:
// ConfigError/ShapeError -> 2, DataError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Loss over an empty supervision region. Callers skip the sample.
class EmptyRegionError : public Error {
 public:
  explicit EmptyRegionError(const std::string& msg) : Error(msg) {}
};

}  // namespace tdc

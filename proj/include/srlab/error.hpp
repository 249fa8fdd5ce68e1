#pragma once

#include <stdexcept>
#include <string>

namespace srlab {

// Exit-code classes used by the CLI: usage/config = 1, data = 2, numerical = 3.
enum class ErrorKind { config = 1, data = 2, numerical = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

/// Programming or usage error: bad shapes, invalid specs, unknown config keys.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Anything wrong with input data on disk or its contents.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class FileNotFoundError : public DataError {
 public:
  using DataError::DataError;
};

class UnsupportedBitDepthError : public DataError {
 public:
  using DataError::DataError;
};

class MalformedImageError : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientFlatAreaError : public DataError {
 public:
  using DataError::DataError;
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

}  // namespace srlab

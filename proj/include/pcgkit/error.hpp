#pragma once

#include <stdexcept>
#include <string>

namespace pcgkit {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or API precondition (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Anything wrong with input data: malformed files, invalid labels (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class UnsupportedChannelsError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Non-finite training loss (exit code 4).
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace pcgkit

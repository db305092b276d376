#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fuda {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a documented precondition (range, finiteness, normalization).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor or dataset shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed feature file or model file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}
  explicit ParseError(const std::string& message) : Error(message) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_ = 0;
};

/// Violation of the one-shot client/server contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or produced non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration is invalid or unreadable.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fuda

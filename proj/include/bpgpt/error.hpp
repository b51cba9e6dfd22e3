#pragma once

#include <stdexcept>
#include <string>

namespace bpgpt {

// Invalid configuration or incompatible settings. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Stage-2 settings that do not match the stage-1 checkpoint.
class CompatibilityError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Bad or missing input data. CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : DataError(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bpgpt

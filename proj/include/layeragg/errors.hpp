#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace layeragg {

// Base for every error raised by the library. The CLI maps ConfigError and
// ParseError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long epoch) : Error(what), epoch_(epoch) {}
  long epoch() const noexcept { return epoch_; }

 private:
  long epoch_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace layeragg

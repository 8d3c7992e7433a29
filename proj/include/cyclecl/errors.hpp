#pragma once

#include <stdexcept>
#include <string>

namespace cyclecl {

// Exception hierarchy. The CLI maps these onto process exit codes:
// ParameterError/DimensionError/ConfigError -> 1, IoError/FormatError -> 2,
// NumericError -> 3.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Signals that an input violated a numerical precondition (zero-norm row,
// non-finite value, non-unit embedding).
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace cyclecl

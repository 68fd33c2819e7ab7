#pragma once

#include <stdexcept>
#include <string>

namespace mtdoc {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An index (token id, class target, coordinate) is outside its table.
class IndexError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Input data (JSONL, boxes, pixels) failed validation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A run configuration is inconsistent or incomplete.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A loss, activation or gradient became NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtdoc

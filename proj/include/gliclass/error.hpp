#pragma once

#include <stdexcept>
#include <string>

namespace gliclass {

// Invalid configuration or user-supplied settings. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or numeric-domain violations (log of non-positive,
// division by zero, ...). CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated data contract: malformed datasets, label overflow, failed
// splits. CLI exit code 4.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: preconditions not met by the caller.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Shape/dimension mismatch between tensors.
class ShapeError : public ContractError {
 public:
  explicit ShapeError(const std::string& msg) : ContractError(msg) {}
};

}  // namespace gliclass

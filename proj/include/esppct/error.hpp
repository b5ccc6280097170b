#pragma once

#include <stdexcept>
#include <string>

namespace esppct {

// Error categories double as the CLI exit codes.
enum class ErrorKind : int {
  kUsage = 1,    // bad arguments, invalid configuration, shape/contract misuse
  kData = 2,     // unreadable or malformed input files
  kNumeric = 3,  // non-finite values, failed gradient checks, divergence
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

}  // namespace esppct

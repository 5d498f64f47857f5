#pragma once

#include <stdexcept>
#include <string>

namespace fmirl {

// Exit codes used by the command-line front end.
enum class ExitCode : int {
  ok = 0,
  config = 2,
  data = 3,
  numerical = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Invalid configuration or shape mismatch between components.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::config, what) {}
};

// API misuse: empty batches, non-scalar losses, empty sweeps.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ExitCode::config, what) {}
};

// Malformed or non-finite input data, I/O failures.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

// NaN/Inf produced during optimization or integration.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ExitCode::numerical, what) {}
};

}  // namespace fmirl

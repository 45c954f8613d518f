#pragma once

#include <stdexcept>
#include <string>

namespace trinet {

// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 1,
  kNumerical = 2,
  kIo = 3,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const { return ExitCode::kConfig; }
};

// Tensor shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kNumerical; }
};

// Caller broke an API precondition (non-scalar loss, wrong mode, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Argument values outside their domain.
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kNumerical; }
};

class CheckpointError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kIo; }
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kIo; }
};

}  // namespace trinet

#pragma once

#include <stdexcept>
#include <string>

namespace metareg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or grid mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain scalar argument (negative sigma, non-positive scale, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition (non-scalar loss, ragged inputs).
class ContractError : public Error {
 public:
  using Error::Error;
};

// I/O failures, malformed files, unusable evaluation data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or parameters during optimisation.
class NumericalFault : public Error {
 public:
  using Error::Error;
};

// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kNumerical = 4,
};

}  // namespace metareg

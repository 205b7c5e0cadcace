#pragma once

#include <stdexcept>
#include <string>

namespace lmvp {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller violated an operation contract (bad shapes, bad arguments).
struct ContractError : Error {
  using Error::Error;
};

// A configuration value or combination of values is invalid.
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem-level failure (open/read/write).
struct IoError : Error {
  using Error::Error;
};

// A file exists but its bytes do not match the expected container layout.
struct FormatError : Error {
  using Error::Error;
};

// Training produced a non-finite value and had to stop.
struct NumericalError : Error {
  using Error::Error;
};

}  // namespace lmvp

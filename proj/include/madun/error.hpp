#pragma once

#include <stdexcept>
#include <string>

namespace madun {

// Failure classes. The CLI maps each class to an exit code and a one-line
// diagnostic prefix.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
  virtual char const *kind() const noexcept { return "error"; }
};

struct ShapeError : Error {
  using Error::Error;
  char const *kind() const noexcept override { return "shape error"; }
};

struct ConfigError : Error {
  using Error::Error;
  char const *kind() const noexcept override { return "config error"; }
};

struct ContractError : Error {
  using Error::Error;
  char const *kind() const noexcept override { return "contract error"; }
};

struct DataError : Error {
  using Error::Error;
  char const *kind() const noexcept override { return "data error"; }
};

struct LoadError : Error {
  using Error::Error;
  char const *kind() const noexcept override { return "load error"; }
};

struct DivergenceError : Error {
  using Error::Error;
  char const *kind() const noexcept override { return "divergence"; }
};

} // namespace madun

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cycledepth {

using i64 = std::int64_t;
using u64 = std::uint64_t;

// Failure taxonomy. The CLI maps these onto process exit codes:
// ConfigError -> 2, StateError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
  using Error::Error;
};

class ValueError : public Error {
  using Error::Error;
};

class ConfigError : public Error {
  using Error::Error;
};

class StateError : public Error {
  using Error::Error;
};

class NumericError : public Error {
  using Error::Error;
};

class IoError : public Error {
  using Error::Error;
};

}  // namespace cycledepth

#pragma once

#include <stdexcept>
#include <string>

namespace tap {

// Error taxonomy shared across the library. The CLI maps ConfigError to
// exit code 2 and NumericError to exit code 3; everything else is 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};
struct IndexError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct CapacityError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct CheckpointError : Error {
  using Error::Error;
};
struct ArgumentError : Error {
  using Error::Error;
};
struct PlannerError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};

}  // namespace tap

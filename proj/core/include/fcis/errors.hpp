#pragma once

#include <stdexcept>
#include <string>

namespace fcis {

// Bad or inconsistent input artifacts: files, datasets, checkpoints.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where the math requires finite ones (e.g. NaN loss).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unknown keys, unparsable values, contradictory settings.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fcis

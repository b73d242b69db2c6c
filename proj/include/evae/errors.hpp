// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace evae {

// Shape or extent mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Operation invoked in the wrong lifecycle state (e.g. backward before forward).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// Invalid model / training / experiment configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated file contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

}  // namespace evae

#pragma once

#include <stdexcept>
#include <string>

namespace clipnet {

// Error taxonomy mirrors the CLI exit-code contract:
//   ConfigError -> 1 (usage/config), DataError -> 2 (data contract),
//   NumericError -> 3 (non-finite numerics). ShapeError is a programming
// contract violation surfaced to operators as a data-contract failure.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace clipnet

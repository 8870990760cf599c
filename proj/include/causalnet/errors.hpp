#pragma once

#include <stdexcept>

namespace causalnet {

// Invalid configuration or parameter dimensions.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure (divergence, singularity) that is not a usage error.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace causalnet

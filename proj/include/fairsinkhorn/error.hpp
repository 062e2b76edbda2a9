#pragma once

#include <stdexcept>
#include <string>

namespace fairsinkhorn {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration or CLI usage. CLI exit code 1.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or degenerate input data (dataset files, checkpoints,
// single-class metric inputs). CLI exit code 1.
struct DataError : Error {
    using Error::Error;
};

// Numerical failure at runtime (non-finite loss, solver blow-up).
// CLI exit code 2.
struct NumericError : Error {
    using Error::Error;
};

} // namespace fairsinkhorn

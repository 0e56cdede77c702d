#pragma once

#include <stdexcept>
#include <string>

namespace flowkd {

// Bad run configuration or invalid arguments wired from a config file.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Missing, corrupt, or inconsistent input data.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values or failed numerical checks.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace flowkd

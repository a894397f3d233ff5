#pragma once

#include <stdexcept>
#include <string>

namespace zsml {

// Invalid configuration or API contract violation (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (CLI exit code 3).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values or degenerate numerics during training (CLI exit code 4).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

} // namespace zsml

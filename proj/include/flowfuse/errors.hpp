#pragma once

#include <stdexcept>
#include <string>

namespace flowfuse {

// Error categories map one-to-one onto CLI exit codes.

/// Bad configuration or usage (exit code 1).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (exit code 2).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or other numerical breakdown (exit code 3).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes passed to a primitive.
class ShapeError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace flowfuse

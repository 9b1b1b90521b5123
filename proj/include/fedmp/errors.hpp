#pragma once

#include <stdexcept>
#include <string>

namespace fedmp {

// Invalid architecture, experiment config or other static setup.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dimension or architecture mismatch between operands.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf encountered in a gradient, loss or parameter.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A client or dataset does not hold the data an operation needs.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fedmp

#pragma once

#include <stdexcept>

namespace pdrop {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid model, schedule or strategy parameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or out-of-range input data (sequences, fixtures).
class InputError : public Error {
public:
    using Error::Error;
};

/// Index or count outside the valid range.
class BoundsError : public Error {
public:
    using Error::Error;
};

/// File could not be read, written or decoded.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace pdrop

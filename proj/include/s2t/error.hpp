#pragma once

#include <stdexcept>
#include <string>

namespace s2t {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration / input data (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Numerical failure: CFL violation, non-finite values, horizon overrun (CLI exit code 3).
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace s2t

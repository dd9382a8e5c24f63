#pragma once

#include <stdexcept>
#include <string>

namespace npiv {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Functions or tables whose sizes do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A construction whose invariants do not hold (weights, joint tables, kernels).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// The response function is not in the range of the operator.
class NoSolutionError : public Error {
public:
    using Error::Error;
};

/// The response is numerically outside range(T T*).
class SourceConditionError : public Error {
public:
    using Error::Error;
};

/// Malformed run configuration or scenario document.
class ConfigError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require_same_size(long a, long b, const char* what)
{
    if (a != b) {
        throw DimensionError(std::string(what) + ": size " + std::to_string(a) +
                             " does not match " + std::to_string(b));
    }
}

} // namespace detail
} // namespace npiv

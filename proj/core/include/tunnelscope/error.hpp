#pragma once

#include <stdexcept>
#include <string>

namespace tunnelscope {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An operation was called with arguments outside its contract.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Matrix/vector shapes do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Similarity index undefined because a self-HSIC term is zero.
class DegenerateRepresentationError : public Error {
public:
    using Error::Error;
};

/// Loss became NaN/Inf during optimization.
class TrainingDivergedError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents (CSV, checkpoint, config).
class FormatError : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw PreconditionError(message);
}

}  // namespace tunnelscope

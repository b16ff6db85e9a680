#pragma once

#include <stdexcept>
#include <string>

namespace bevcell {

/// Base class of every error thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input bytes/text (truncated file, unparsable line).
struct FormatError : Error {
    using Error::Error;
};

/// Syntactically valid input with semantically invalid content
/// (non-finite coordinate, non-orthonormal rotation).
struct DataError : Error {
    using Error::Error;
};

/// Out-of-domain configuration value (negative gap, b <= 0).
struct ParameterError : Error {
    using Error::Error;
};

/// Operand shapes incompatible; message lists both shapes.
struct ShapeError : Error {
    using Error::Error;
};

/// An API precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

/// Matrix not invertible within tolerance.
struct SingularityError : Error {
    using Error::Error;
};

/// No BEV cell is occupied on both sides of a pair; the pair is degenerate.
struct EmptyOverlapError : Error {
    using Error::Error;
};

/// A file could not be opened or found.
struct FileError : Error {
    using Error::Error;
};

/// A whole run failed (e.g. every pair of a training set degenerate).
struct RunError : Error {
    using Error::Error;
};

}  // namespace bevcell

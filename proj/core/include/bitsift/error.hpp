#pragma once

#include <stdexcept>
#include <string>

namespace bitsift {

// Base class for all library errors. Subclasses map onto the CLI exit codes
// documented in the README (2 config, 3 training/invariant, 4 io/format).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes incompatible with the requested operation.
struct ShapeError : Error {
    using Error::Error;
};

// Value outside the documented domain (labels, plane ranges, code widths, ...).
struct ValueError : Error {
    using Error::Error;
};

// Config file failed to parse or validate. Messages name the offending field.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed external file: IDX, CIFAR binary, checkpoint, scheme JSON.
struct FormatError : Error {
    using Error::Error;
};

// Filesystem failure (missing file, short write, ...).
struct IoError : Error {
    using Error::Error;
};

// Training produced a non-finite loss or broke a training invariant.
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace bitsift

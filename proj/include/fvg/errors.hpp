#pragma once

#include <stdexcept>
#include <string>

namespace fvg {

// Root of every error the engine raises. The CLI maps any of these to a
// nonzero exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid hyperparameter, toggle combination, or branch/parameter mismatch.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Vector/matrix dimensions disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

// Near-zero norm where a direction is required.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

// NaN/Inf appeared in a loss or gradient during training.
class DivergedError : public Error {
public:
    using Error::Error;
};

// On-disk data does not match the FVGE layout.
class FormatError : public Error {
public:
    using Error::Error;
};

// Record-level invariant violation (carries the offending record id in the message).
class ValidationError : public Error {
public:
    using Error::Error;
};

}  // namespace fvg

#pragma once

#include <stdexcept>
#include <string>

namespace awcoord {

/// Base of everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid input data or a broken structural invariant. CLI exit code 1.
struct ValidationError : Error {
    using Error::Error;
};

/// Numerical breakdown: conditioning, iteration caps, step underflow. CLI exit code 2.
struct NumericalError : Error {
    using Error::Error;
};

/// Filesystem trouble. CLI exit code 3.
struct IoError : Error {
    using Error::Error;
};

struct BadSignPattern : ValidationError {
    using ValidationError::ValidationError;
};
struct NotRowDominant : ValidationError {
    using ValidationError::ValidationError;
};
struct SingularOrNegativeInverse : ValidationError {
    using ValidationError::ValidationError;
};
struct ConditionViolated : ValidationError {
    using ValidationError::ValidationError;
};
struct ParseError : ValidationError {
    using ValidationError::ValidationError;
};

struct ResidualTooLarge : NumericalError {
    using NumericalError::NumericalError;
};
struct NumericalFailure : NumericalError {
    using NumericalError::NumericalError;
};
struct StepUnderflow : NumericalError {
    using NumericalError::NumericalError;
};
struct NonFiniteState : NumericalError {
    using NumericalError::NumericalError;
};
struct RejectionBudgetExhausted : NumericalError {
    using NumericalError::NumericalError;
};

}  // namespace awcoord

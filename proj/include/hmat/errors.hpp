#pragma once

#include <stdexcept>
#include <string>

namespace hmat {

/// Extents or ranks that do not satisfy an operation's contract.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A NaN or +Inf reached a place where only finite values are allowed.
struct NonFiniteError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Misuse of the autograd graph (double backward, non-scalar loss, ...).
struct GraphError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Bad configuration: unknown keys, out-of-range values, disabled loss terms.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad or corrupt input data (files, images, checkpoints).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A guaranteed property was observed to be broken at runtime.
struct InvariantViolation : std::logic_error {
    using std::logic_error::logic_error;
};

}  // namespace hmat

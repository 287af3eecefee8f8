#pragma once

#include <stdexcept>
#include <string>

namespace gidnet {

// Error categories map to CLI exit codes: validation-type errors exit 1,
// runtime-type errors exit 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor/layer shapes.
struct DimensionError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

// API misuse (non-scalar backward, reusing a consumed tape, ...).
struct ContractError : Error {
    using Error::Error;
};

// Bad caller-supplied data (degenerate boxes, non-binary labels, ...).
struct InputError : Error {
    using Error::Error;
};

// Bad configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or inconsistent files.
struct LoadError : Error {
    using Error::Error;
};

// Training aborted (NaN gradients / loss).
struct TrainingError : Error {
    using Error::Error;
};

// Checkpoint does not match the requested configuration.
struct CheckpointError : Error {
    using Error::Error;
};

}  // namespace gidnet

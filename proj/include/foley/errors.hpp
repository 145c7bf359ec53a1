#pragma once

#include <stdexcept>
#include <string>

namespace foley {

// Base for all library errors. CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape / dimension mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Bad argument values (ranges, invalid options).
struct ValueError : Error {
    using Error::Error;
};

// NaN/Inf detected where finite values are required (exit code 4).
struct NumericError : Error {
    using Error::Error;
};

// Filesystem / serialization failures.
struct IoError : Error {
    using Error::Error;
};

// Config parsing and validation (exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

// A pipeline stage was invoked before its inputs exist (exit code 3).
struct MissingPrerequisiteError : Error {
    using Error::Error;
};

// Checkpoint file problems, with a distinct kind per failure mode.
struct CheckpointError : Error {
    enum class Kind { bad_magic, duplicate_name, truncated, bad_dtype, missing_tensor };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

}  // namespace foley

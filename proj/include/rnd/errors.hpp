#pragma once

#include <stdexcept>
#include <string>

namespace rnd {

/// Invalid configuration: unknown keys, out-of-range settings, incompatible
/// weight files.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller supplied an argument outside the operation's domain.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite or degenerate numbers where finite ones are required.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training could not meet its contract (diverged, accuracy floor unmet).
class TrainingFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A required file or directory produced by an earlier step is absent.
class MissingArtifact : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace rnd

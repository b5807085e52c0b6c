#pragma once

#include <stdexcept>
#include <string>

namespace aegis {

/// Operand shapes are incompatible for the requested operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf appeared where finite values are required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition stated in an operation's contract was violated by the caller.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Invalid user-supplied configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Training or fine-tuning diverged. Carries the epoch and pipeline stage.
class NumericAbort : public NumericError {
public:
    NumericAbort(long epoch, std::string stage, const std::string& what)
        : NumericError("numeric abort at epoch " + std::to_string(epoch) + " [" + stage + "]: " + what),
          epoch_(epoch),
          stage_(std::move(stage)) {}

    long epoch() const noexcept { return epoch_; }
    const std::string& stage() const noexcept { return stage_; }

private:
    long epoch_;
    std::string stage_;
};

/// A persisted artifact is missing, unreadable or fails its integrity check.
class ArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace aegis

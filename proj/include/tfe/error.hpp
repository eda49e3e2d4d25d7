#pragma once

#include <stdexcept>
#include <string>

namespace tfe {

// Invalid configuration or hyperparameters. CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or length mismatch between operands.
struct DimError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Input outside the supported range (e.g. class count above the ceiling).
// CLI exit code 3.
struct UnsupportedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File format / serialization problems.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A bounded resample-and-retry loop exhausted its budget.
struct RetryExhaustedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace tfe

#pragma once

#include <stdexcept>
#include <string>

namespace ct {

// Error taxonomy used across the library. Every throw site names the
// operation and the offending values so failures are actionable.

// Incompatible tensor/matrix shapes.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input outside the mathematical domain of an operation (log of a
// non-positive value, normalizing a zero row, non-positive sigma).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller broke an API precondition (non-scalar loss, missing gradient,
// label out of range, mismatched model architectures).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or infeasible configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A computed quantity is NaN/Inf where the contract requires finiteness.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// A class queue needed for a contrastive term has no usable keys yet.
// Callers skip the affected term for the current sample.
struct NotWarmError : std::runtime_error {
    explicit NotWarmError(const std::string& msg) : std::runtime_error(msg) {}
};

// A training run failed (divergence, NaN loss); carries step context.
struct RunError : std::runtime_error {
    explicit RunError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ct

#pragma once

#include <stdexcept>
#include <string>

namespace ddln {

/// Input sizes disagree (e.g. X has d columns but theta has length != d).
class DimensionMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Argument outside the domain of a formula (negative radicand, base <= 0, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Some coordinate has a tie for the minimal absolute node value at t = 0.
class AssumptionViolated : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A diagnostic was given a trajectory produced by a different model.
class ModelMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class SingularMatrix : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by the integrator; carries the flow time at which it gave up.
class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, double time)
        : std::runtime_error(what + " at t=" + std::to_string(time)), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double last_residual)
        : std::runtime_error(what), last_residual_(last_residual) {}
    double last_residual() const noexcept { return last_residual_; }

private:
    double last_residual_;
};

}  // namespace ddln

#pragma once

#include <stdexcept>
#include <string>

namespace homlab {

// Invalid specs, malformed configs, bad file formats.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// A precondition on the mathematical domain was violated (e.g. a velocity
// outside the invertibility ball, a query outside a table hull).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& m) : std::runtime_error(m) {}
};

// An endpoint-constrained problem has no admissible path on the given grids.
struct InfeasibleError : std::runtime_error {
    explicit InfeasibleError(const std::string& m) : std::runtime_error(m) {}
};

// A declared model property failed numerically (root solve diverged,
// coercivity too weak for a radius ladder, ...).
struct ModelContractError : std::runtime_error {
    explicit ModelContractError(const std::string& m) : std::runtime_error(m) {}
};

// Control-repair target bound below the workable threshold; carries the
// smallest radius that would work.
struct ThresholdError : std::runtime_error {
    double required_radius;
    ThresholdError(const std::string& m, double r)
        : std::runtime_error(m), required_radius(r) {}
};

// Scheme-level failures: CFL violations, sup attained on a grid boundary
// after retry, non-finite values.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& m) : std::runtime_error(m) {}
};

// Pipeline stage input missing on disk.
struct MissingArtifactError : std::runtime_error {
    explicit MissingArtifactError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace homlab

#pragma once

#include <stdexcept>
#include <string>

namespace qtat {

// Grid/field shape mismatches, malformed manifests, unsupported dimensions.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing input file.
class FileNotFoundError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

// Out-of-range physical or numerical parameters (k <= 0, q_min >= q_max, ...).
class ParameterError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Linear solver failure; carries the last relative residual.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string &what, double residual)
        : std::runtime_error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

}  // namespace qtat

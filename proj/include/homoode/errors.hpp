#pragma once

#include <stdexcept>
#include <string>

namespace homoode {

// Shape/usage problems: mismatched dimensions, bad op arguments.
struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid parameter values (rates, tolerances, counts).
struct ParameterError : std::invalid_argument {
    explicit ParameterError(const std::string& msg) : std::invalid_argument(msg) {}
};

// NaN/Inf encountered, or a solver failed to converge.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Jacobian (near-)singular along a homotopy path.
struct SingularityError : NumericError {
    SingularityError(const std::string& msg, double lambda, double rcond)
        : NumericError(msg), lambda(lambda), rcond(rcond) {}
    double lambda;
    double rcond;
};

// File format / IO problems.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : IoError {
    explicit FormatError(const std::string& msg) : IoError(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace homoode

#pragma once

#include <stdexcept>
#include <string>

namespace icegraph {

/// Malformed or inconsistent input data (bad mesh file, shape mismatch,
/// out-of-range feature values). Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure during computation (CFL violation, non-finite loss,
/// divergent training). Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace icegraph

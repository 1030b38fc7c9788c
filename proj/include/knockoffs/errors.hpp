#pragma once

#include <stdexcept>
#include <string>

namespace knockoff {

// Bad user input: dimension mismatches, invalid parameters, malformed files.
class validation_error : public std::invalid_argument {
public:
    explicit validation_error(const std::string& what) : std::invalid_argument(what) {}
};

// Numerical failure on structurally valid input: factorization breakdown,
// non-convergence, loss of positive definiteness beyond tolerance.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace knockoff

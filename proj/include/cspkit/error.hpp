#pragma once

#include <stdexcept>
#include <string>

namespace cspkit {

// Bad input: malformed files, out-of-range parameters, violated preconditions.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The input was well formed but the numerics failed (rank deficiency,
// singular updates, unstable filter designs).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cspkit

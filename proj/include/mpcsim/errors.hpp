#pragma once

#include <stdexcept>
#include <string>

namespace mpcsim {

/// Invalid user input: malformed descriptors, duty vectors that do not sum
/// to one, spans out of range, unparsable configs.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Mutually contradictory operating point, e.g. two voltage sources whose
/// spans imply different stack voltages. Carries both implied values so the
/// caller can report them.
class InconsistencyError : public std::runtime_error {
public:
    InconsistencyError(const std::string& what, double implied_a, double implied_b)
        : std::runtime_error(what), implied_a(implied_a), implied_b(implied_b) {}
    double implied_a = 0.0;
    double implied_b = 0.0;
};

/// No nonsynchronous derivation exists for the requested power flow.
class DerivationError : public std::runtime_error {
public:
    explicit DerivationError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure inside the simulation engine (singular system,
/// unresolvable diode states).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace mpcsim

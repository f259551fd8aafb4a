#pragma once

#include <stdexcept>
#include <string>

namespace opidyn {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration: bad parameter values, unknown config keys,
// incompatible grids. CLI maps these to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Invalid numerical input to a pure function (non-finite state, t <= 0, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// Trajectory or quadrature blow-up; carries the failing time.
class IntegrationError : public Error {
public:
    IntegrationError(const std::string& msg, double t_fail)
        : Error(msg + " (t = " + std::to_string(t_fail) + ")"), t_fail(t_fail) {}
    double t_fail;
};

// Statistical estimation cannot proceed (degenerate direction, underflow, ...).
class EstimationError : public Error {
public:
    using Error::Error;
};

// Controllability Gramian numerically singular; names the null direction.
class SingularGramianError : public Error {
public:
    SingularGramianError(const std::string& msg, int null_axis)
        : Error(msg), null_axis(null_axis) {}
    int null_axis;  // 0-based state coordinate closest to the null direction
};

}  // namespace opidyn

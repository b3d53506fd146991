#pragma once

#include <stdexcept>
#include <string>

namespace kbl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid construction parameters or configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data violating a documented precondition (compatibility moments etc).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf detected, singular system, or a broken operator.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// An iterative or direct solver could not produce an acceptable answer.
class SolverError : public Error {
public:
    using Error::Error;
};

/// Picard iteration stopped contracting; the data is too large.
class SmallnessError : public Error {
public:
    SmallnessError(const std::string& what, double delta)
        : Error(what), delta_(delta) {}
    double delta() const noexcept { return delta_; }

private:
    double delta_;
};

/// Filesystem failures while exporting results.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace kbl

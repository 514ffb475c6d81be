#pragma once

#include <stdexcept>
#include <string>

namespace thermoq {

// Bad dimension or size mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input matrix fails a structural check (Hermiticity, trace, ...).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Bloch vector does not describe a positive semi-definite density matrix.
class StateError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Adaptive integration gave up; carries the last time reached successfully.
class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, double last_good_time)
        : std::runtime_error(what), last_good_time_(last_good_time) {}
    double last_good_time() const noexcept { return last_good_time_; }

private:
    double last_good_time_;
};

// Invalid run configuration (unknown keys, out-of-range values).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed dataset, experimental input, or configuration file.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace thermoq

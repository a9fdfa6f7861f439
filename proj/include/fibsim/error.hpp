#pragma once

#include <stdexcept>
#include <string>

namespace fibsim {

/// Argument outside the mathematical domain of an operation (non-positive widths, negative doses, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Query outside a tabulated range (straggle table, yield grid).
class RangeError : public std::range_error {
public:
    using std::range_error::range_error;
};

/// A nonlinear fit failed to converge or produced an unusable result.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed configuration or input file. `location` names the file and, when known, the line/field.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& location, const std::string& what)
        : std::runtime_error(location.empty() ? what : location + ": " + what), location_(location) {}
    const std::string& location() const noexcept { return location_; }

private:
    std::string location_;
};

/// Persisted report failed its digest or structural checks.
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fibsim

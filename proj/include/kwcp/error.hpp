#pragma once

#include <stdexcept>
#include <string>

namespace kwcp {

/// Broad failure classes. The CLI maps them onto exit codes
/// (input/validation -> 2, numerical -> 3).
enum class ErrorKind {
    Schema,           // missing column, malformed file
    Validation,       // precondition violated by otherwise well-formed input
    ReferentialIntegrity,
    UnknownGene,
    InsufficientCells,
    EmptyStratum,
    NoOverlap,        // N* = 0
    DegenerateCurve,
    Infeasible,
    Domain,           // argument outside the mathematical domain
    Numerical,        // factorization failure, divergence
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    bool is_numerical() const noexcept
    {
        return kind_ == ErrorKind::Numerical;
    }

private:
    ErrorKind kind_;
};

const char* to_string(ErrorKind kind) noexcept;

} // namespace kwcp

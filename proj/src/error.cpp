#include "kwcp/error.hpp"

namespace kwcp {

const char* to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::Schema: return "schema error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::ReferentialIntegrity: return "referential-integrity error";
    case ErrorKind::UnknownGene: return "unknown-gene error";
    case ErrorKind::InsufficientCells: return "insufficient-cells error";
    case ErrorKind::EmptyStratum: return "empty-stratum error";
    case ErrorKind::NoOverlap: return "no-overlap error";
    case ErrorKind::DegenerateCurve: return "degenerate-curve error";
    case ErrorKind::Infeasible: return "infeasible-balance error";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Numerical: return "numerical error";
    }
    return "error";
}

} // namespace kwcp

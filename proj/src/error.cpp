#include "supplyeq/error.hpp"

namespace supplyeq {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::OutOfBounds: return "OutOfBounds";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::NoBracket: return "NoBracket";
        case ErrorCode::HintsMissing: return "HintsMissing";
        case ErrorCode::EnvelopeNotDownwardResponsive: return "EnvelopeNotDownwardResponsive";
        case ErrorCode::MaxIterExceeded: return "MaxIterExceeded";
        case ErrorCode::BracketNotFound: return "BracketNotFound";
        case ErrorCode::NotDiagonallyStrict: return "NotDiagonallyStrict";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::GridTooLarge: return "GridTooLarge";
        case ErrorCode::BalanceViolated: return "BalanceViolated";
        case ErrorCode::FamilyLacksTransfers: return "FamilyLacksTransfers";
        case ErrorCode::NonpositiveMatch: return "NonpositiveMatch";
        case ErrorCode::DegenerateUtility: return "DegenerateUtility";
        case ErrorCode::MCNonMonotone: return "MCNonMonotone";
        case ErrorCode::GNotInvertible: return "GNotInvertible";
        case ErrorCode::ZeroPredictedCell: return "ZeroPredictedCell";
        case ErrorCode::SingularConstraintJacobian: return "SingularConstraintJacobian";
        case ErrorCode::OptimizerStalled: return "OptimizerStalled";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::SingularWeight: return "SingularWeight";
    }
    return "Unknown";
}

}  // namespace supplyeq

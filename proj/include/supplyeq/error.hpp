#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace supplyeq {

enum class ErrorCode {
    OutOfBounds,
    NonFinite,
    NoBracket,
    HintsMissing,
    EnvelopeNotDownwardResponsive,
    MaxIterExceeded,
    BracketNotFound,
    NotDiagonallyStrict,
    InvalidArgument,
    GridTooLarge,
    BalanceViolated,
    FamilyLacksTransfers,
    NonpositiveMatch,
    DegenerateUtility,
    MCNonMonotone,
    GNotInvertible,
    ZeroPredictedCell,
    SingularConstraintJacobian,
    OptimizerStalled,
    DimensionMismatch,
    SingularWeight,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Base error for every failure raised by the library. The code is stable and
/// is what callers (and the CLI exit-code mapping) should dispatch on.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace supplyeq

#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "supplyeq/error.hpp"
#include "supplyeq/supply_system.hpp"

namespace supplyeq {

struct SolverOptions {
    double tol_outer = 1e-9;    ///< sup-norm tolerance on residual and on the Jacobi step
    double tol_inner = 1e-13;   ///< relative width of the 1-D root bracket
    double tol_bracket = 1e-9;  ///< dichotomy epsilon on the pinned coordinate and on |psi - K|
    int max_iter_jacobi = 10'000;
    int max_iter_bracket = 200;
    int max_bracket_expansions = 64;
    bool parallel = true;         ///< OpenMP Jacobi sweep; the serial sweep is the reference
    bool record_iterates = false; ///< keep every Jacobi iterate in the report
    /// Smallest residual the system can reach (draw resolution for simulated
    /// shares). Replaces tol_outer in the residual test only.
    double residual_floor = 0.0;

    void validate() const;
};

struct SolveReport {
    Vec p_star;
    double residual = kInf;
    double normalization_value = 0.0;
    int pin = 0;
    double pin_value = 0.0;
    int jacobi_iterations = 0;
    int bracket_iterations = 0;
    int pinned_solves = 0;
    bool converged = false;
    bool monotone_certificate = false;
    std::vector<std::pair<double, double>> bracket_history;
    std::vector<Vec> iterates;
};

/// Solver failure that still carries the best iterate reached.
class SolveError : public Error {
public:
    SolveError(ErrorCode code, const std::string& what, SolveReport best)
        : Error(code, what), best_(std::move(best)) {}
    const SolveReport& best() const noexcept { return best_; }

private:
    SolveReport best_;
};

/// One Jacobi coordinate step: the left endpoint inf{t : Q_z(t, p_-z) >= q_z},
/// searched outward from p_z. The returned value sits at most one inner
/// tolerance below that endpoint, so Q_z stays at or under q_z.
double coordinate_update(const SupplySystem& system, const Vec& q, const Vec& p, int z,
                         const SolverOptions& opts = {});

/// p with p_pin = pin_value and Q_z(p) <= q_z for every z != pin, built from
/// the system's ordering and envelopes.
Vec build_subsolution(const SupplySystem& system, const Vec& q, int pin, double pin_value,
                      const SolverOptions& opts = {});

/// Subsolution for systems whose envelopes are bounded: a descending Jacobi
/// from p_pin + T (doubling T) converges to the pinned solution from above,
/// then a step along -J^{-1} 1 (J the off-pin Jacobian) moves strictly under
/// target. NoBracket when no pinned solution is reached.
Vec subsolution_from_above(const SupplySystem& system, const Vec& q, int pin, double pin_value,
                           const SolverOptions& opts = {});

/// Jacobi iteration with p_pin held at pin_value. Starts from `start` when it
/// is a subsolution, from build_subsolution otherwise.
SolveReport solve_pinned(const SupplySystem& system, const Vec& q, int pin, double pin_value,
                         const SolverOptions& opts = {}, const std::optional<Vec>& start = std::nullopt);

/// Dichotomy on the anchor coordinate until psi(p*) = K. When psi is too steep
/// in the anchor to reach tol_bracket, the dichotomy is rerun pinned on the
/// coordinate that moved most across the final bracket.
SolveReport solve_normalized(const SupplySystem& system, const Vec& q, const Normalization& norm,
                             double K, const SolverOptions& opts = {},
                             std::optional<double> initial_pin = std::nullopt);

/// True when Q_z(p) <= q_z + slack for every z != pin.
bool is_subsolution(const SupplySystem& system, const Vec& q, const Vec& p, int pin, double slack = 0.0);

void check_target(const SupplySystem& system, const Vec& q);

}  // namespace supplyeq

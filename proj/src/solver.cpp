#include "supplyeq/solver.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>

#include "supplyeq/jacobi_kernels.hpp"

namespace supplyeq {

void SolverOptions::validate() const {
    if (!(tol_outer > 0.0) || !(tol_inner > 0.0) || !(tol_bracket > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "solver tolerances must be positive");
    }
    if (!(residual_floor >= 0.0)) throw Error(ErrorCode::InvalidArgument, "residual floor must be nonnegative");
    if (max_iter_jacobi < 1 || max_iter_bracket < 1 || max_bracket_expansions < 1) {
        throw Error(ErrorCode::InvalidArgument, "solver iteration caps must be at least 1");
    }
}

void check_target(const SupplySystem& system, const Vec& q) {
    if (q.size() != system.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "target vector has wrong dimension");
    }
    if (!q.allFinite()) throw Error(ErrorCode::NonFinite, "target vector is not finite");
    const double c = system.balance_constant();
    const double gap = std::abs(q.sum() - c);
    if (gap > 1e-9 * (1.0 + std::abs(c) + q.cwiseAbs().sum())) {
        std::ostringstream msg;
        msg << "target sums to " << q.sum() << " but the balance constant is " << c;
        throw Error(ErrorCode::BalanceViolated, msg.str());
    }
}

namespace {

double bracket_margin(const SolverOptions& opts) { return 4.0 * opts.tol_inner; }

double checked_coordinate(const SupplySystem& system, const Vec& p, int z) {
    const double v = system.coordinate(p, z);
    if (std::isnan(v)) throw Error(ErrorCode::NonFinite, "coordinate evaluation returned nan");
    return v;
}

}  // namespace

double coordinate_update(const SupplySystem& system, const Vec& q, const Vec& p, int z,
                         const SolverOptions& opts) {
    const double target = q[z];
    const Bounds& bounds = system.bounds();
    if (const auto& root = system.coordinate_root()) {
        if (auto t = root(p, z, target)) {
            if (std::isnan(*t)) throw Error(ErrorCode::NonFinite, "coordinate root returned nan");
            if (std::isinf(*t)) {
                throw Error(ErrorCode::NoBracket, "coordinate " + std::to_string(z) + " cannot reach its target");
            }
            return bounds.clamp_inside(z, *t, bracket_margin(opts));
        }
    }

    Vec work = p;
    auto f = [&](double t) {
        work[z] = t;
        return checked_coordinate(system, work, z) - target;
    };

    const double margin = bracket_margin(opts);
    const double t0 = bounds.clamp_inside(z, p[z], margin);
    double lo;
    double hi;
    if (f(t0) < 0.0) {
        lo = t0;
        double step = 1.0;
        bool found = false;
        for (int k = 0; k < opts.max_bracket_expansions; ++k) {
            const double cand = bounds.clamp_inside(z, t0 + step, margin);
            if (cand <= lo) break;
            if (f(cand) >= 0.0) {
                hi = cand;
                found = true;
                break;
            }
            lo = cand;
            step *= 2.0;
        }
        if (!found) {
            throw Error(ErrorCode::NoBracket, "Q_" + std::to_string(z) + " stays below its target when raising its price");
        }
    } else {
        hi = t0;
        double step = 1.0;
        bool found = false;
        for (int k = 0; k < opts.max_bracket_expansions; ++k) {
            const double cand = bounds.clamp_inside(z, t0 - step, margin);
            if (cand >= hi) break;
            if (f(cand) < 0.0) {
                lo = cand;
                found = true;
                break;
            }
            hi = cand;
            step *= 2.0;
        }
        if (!found) {
            throw Error(ErrorCode::NoBracket, "Q_" + std::to_string(z) + " stays above its target when lowering its price");
        }
    }

    // Invariant: f(lo) < 0 <= f(hi).
    while (hi - lo > opts.tol_inner * (1.0 + std::max(std::abs(lo), std::abs(hi)))) {
        const double mid = lo + 0.5 * (hi - lo);
        if (mid <= lo || mid >= hi) break;
        if (f(mid) < 0.0) lo = mid; else hi = mid;
    }
    return lo;
}

bool is_subsolution(const SupplySystem& system, const Vec& q, const Vec& p, int pin, double slack) {
    const Vec Q = system(p);
    for (int z = 0; z < system.dim(); ++z) {
        if (z == pin) continue;
        if (!(Q[z] <= q[z] + slack)) return false;
    }
    return true;
}

namespace {

Vec plan_subsolution(const SupplySystem& system, const Vec& q, int pin, double pin_value,
                     const SubsolutionPlan& plan, const SolverOptions& opts) {
    const int n = system.dim();
    if (static_cast<int>(plan.order.size()) != n || plan.order.front() != pin) {
        throw Error(ErrorCode::InvalidArgument, "subsolution ordering must list every coordinate, anchor first");
    }
    const Bounds& bounds = system.bounds();
    const double margin = bracket_margin(opts);
    Vec p(n);
    for (int z = 0; z < n; ++z) p[z] = bounds.clamp_inside(z, pin_value, margin);
    p[pin] = pin_value;

    for (int k = 1; k < n; ++k) {
        const int z = plan.order[k];
        const double start = p[z];
        double value = plan.envelope(p, k);
        if (std::isnan(value)) throw Error(ErrorCode::NonFinite, "envelope returned nan");
        double step = 1.0;
        int expansions = 0;
        while (value > q[z]) {
            if (expansions++ >= opts.max_bracket_expansions) {
                throw Error(ErrorCode::EnvelopeNotDownwardResponsive,
                            "lowering coordinate " + std::to_string(z) + " never brings its envelope under target");
            }
            const double cand = bounds.clamp_inside(z, start - step, margin);
            if (cand >= p[z]) {
                throw Error(ErrorCode::EnvelopeNotDownwardResponsive,
                            "coordinate " + std::to_string(z) + " reached its lower bound above target");
            }
            p[z] = cand;
            value = plan.envelope(p, k);
            if (std::isnan(value)) throw Error(ErrorCode::NonFinite, "envelope returned nan");
            step *= 2.0;
        }
    }
    return p;
}

void verify_subsolution(const SupplySystem& system, const Vec& q, const Vec& p, int pin, const char* source) {
    const Vec Q = system(p);
    for (int z = 0; z < system.dim(); ++z) {
        if (z == pin) continue;
        if (!(Q[z] <= q[z] + 1e-12 * (1.0 + std::abs(q[z])))) {
            throw Error(ErrorCode::InvalidArgument, std::string(source) + " left coordinate " + std::to_string(z) +
                                                        " above target");
        }
    }
}

// One descending sweep: coordinates above target move down to their left
// endpoint, the rest stay. Reads only p.
void descending_sweep(const SupplySystem& system, const Vec& q, const Vec& p, const Vec& Q, int pin,
                      const SolverOptions& opts, Vec& next) {
    const int n = system.dim();
    next = p;
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
    for (int z = 0; z < n; ++z) {
        if (z == pin || !(Q[z] > q[z])) continue;
        try {
            next[z] = coordinate_update(system, q, p, z, opts);
        } catch (...) {
#pragma omp critical(supplyeq_descent_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

Vec subsolution_from_above(const SupplySystem& system, const Vec& q, int pin, double pin_value,
                           const SolverOptions& opts) {
    const int n = system.dim();
    check_target(system, q);
    const Bounds& bounds = system.bounds();
    const double margin = bracket_margin(opts);
    const double target_tol = 0.1 * opts.tol_outer;

    std::optional<Vec> above;
    double above_residual = kInf;
    for (double T = 1.0; T <= 64.0 && !above; T *= 2.0) {
        Vec p(n);
        for (int z = 0; z < n; ++z) p[z] = bounds.clamp_inside(z, pin_value + T, margin);
        p[pin] = pin_value;
        try {
            Vec next(n);
            for (int it = 0; it < opts.max_iter_jacobi; ++it) {
                const Vec Q = system(p);
                descending_sweep(system, q, p, Q, pin, opts, next);
                const double step = (next - p).cwiseAbs().maxCoeff();
                p.swap(next);
                if (step <= target_tol) break;
            }
        } catch (const Error&) {
            continue;
        }
        const Vec Q = system(p);
        double residual = 0.0;
        for (int z = 0; z < n; ++z) residual = std::max(residual, std::abs(Q[z] - q[z]));
        // Only a seed for the step below target: separate a limit that solves
        // from one that escaped, with room for rounding at the target's scale.
        if (residual <= std::max({10.0 * opts.tol_outer, 1e-8 * (1.0 + q.cwiseAbs().maxCoeff()), 2.0 * opts.residual_floor})) {
            above = p;
            above_residual = residual;
        }
    }
    if (!above) {
        throw Error(ErrorCode::NoBracket, "no pinned solution reached from above at pin value " + std::to_string(pin_value));
    }

    // Direction v with J v = -1 off the pin: v <= 0 when the off-pin block is inverse isotone.
    std::vector<int> free;
    for (int z = 0; z < n; ++z) if (z != pin) free.push_back(z);
    const int m = static_cast<int>(free.size());
    const Vec Q0 = system(*above);
    Eigen::MatrixXd J(m, m);
    for (int j = 0; j < m; ++j) {
        Vec pp = *above;
        const double h = 1e-6 * (1.0 + std::abs(pp[free[j]]));
        pp[free[j]] += h;
        const Vec Qh = system(pp);
        for (int i = 0; i < m; ++i) J(i, j) = (Qh[free[i]] - Q0[free[i]]) / h;
    }
    Vec v = -Vec::Ones(m);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
    if (lu.isInvertible()) {
        const Vec cand = lu.solve(-Vec::Ones(m));
        if (cand.allFinite() && cand.maxCoeff() <= 0.0) v = cand;
    }
    v /= v.cwiseAbs().maxCoeff();

    double eps = std::max(1e-12, 10.0 * above_residual);
    for (int attempt = 0; attempt < 80; ++attempt, eps *= 2.0) {
        Vec s = *above;
        for (int i = 0; i < m; ++i) s[free[i]] = bounds.clamp_inside(free[i], s[free[i]] + eps * v[i], margin);
        if (is_subsolution(system, q, s, pin, 0.0)) return s;
    }
    throw Error(ErrorCode::EnvelopeNotDownwardResponsive, "could not step under target from the pinned solution");
}

Vec build_subsolution(const SupplySystem& system, const Vec& q, int pin, double pin_value,
                      const SolverOptions& opts) {
    const int n = system.dim();
    if (pin < 0 || pin >= n) throw Error(ErrorCode::InvalidArgument, "pin coordinate out of range");
    check_target(system, q);
    const auto& hints = system.hints();
    if (!hints) {
        throw Error(ErrorCode::HintsMissing, "system '" + system.name() + "' provides no subsolution ordering");
    }
    const Bounds& bounds = system.bounds();
    if (!(pin_value > bounds.lower[pin] && pin_value < bounds.upper[pin])) {
        throw Error(ErrorCode::OutOfBounds, "pin value outside the coordinate's bounds");
    }
    const auto plan = hints->plan_for ? hints->plan_for(pin) : std::nullopt;
    if (!plan && !hints->descend_when_plan_fails) {
        throw Error(ErrorCode::HintsMissing,
                    "system '" + system.name() + "' has no envelope construction anchored at " + std::to_string(pin));
    }
    if (plan) {
        try {
            Vec p = plan_subsolution(system, q, pin, pin_value, *plan, opts);
            verify_subsolution(system, q, p, pin, "envelope construction");
            return p;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::EnvelopeNotDownwardResponsive || !hints->descend_when_plan_fails) throw;
        }
    }
    Vec p = subsolution_from_above(system, q, pin, pin_value, opts);
    verify_subsolution(system, q, p, pin, "descent from above");
    return p;
}

SolveReport solve_pinned(const SupplySystem& system, const Vec& q, int pin, double pin_value,
                         const SolverOptions& opts, const std::optional<Vec>& start) {
    opts.validate();
    check_target(system, q);
    const int n = system.dim();
    if (pin < 0 || pin >= n) throw Error(ErrorCode::InvalidArgument, "pin coordinate out of range");
    const Bounds& bounds = system.bounds();
    if (!(pin_value > bounds.lower[pin] && pin_value < bounds.upper[pin])) {
        throw Error(ErrorCode::OutOfBounds, "pin value outside the coordinate's bounds");
    }

    Vec p;
    bool from_subsolution = false;
    if (start) {
        if (start->size() != n) throw Error(ErrorCode::DimensionMismatch, "start vector has wrong dimension");
        Vec s = *start;
        s[pin] = pin_value;
        if (bounds.contains(s) && is_subsolution(system, q, s, pin, opts.tol_outer)) {
            p = std::move(s);
            from_subsolution = true;
        }
    }
    if (!from_subsolution) {
        if (system.hints()) {
            p = build_subsolution(system, q, pin, pin_value, opts);
            from_subsolution = true;
        } else if (start) {
            p = *start;
            p[pin] = pin_value;
        } else {
            p = Vec::Zero(n);
            for (int z = 0; z < n; ++z) p[z] = bounds.clamp_inside(z, 0.0, bracket_margin(opts));
            p[pin] = pin_value;
        }
    }

    SolveReport report;
    report.pin = pin;
    report.pin_value = pin_value;
    report.pinned_solves = 1;
    report.monotone_certificate = from_subsolution;
    if (opts.record_iterates) report.iterates.push_back(p);

    // A residual floor relaxes only the residual test: the iterates still
    // settle to the fixed point, so the step test keeps tol_outer.
    const double residual_tol = std::max(opts.tol_outer, opts.residual_floor);
    Vec best = p;
    double best_residual = kernels::residual_serial(system, q, p);
    Vec next(n);
    double prev_step = kInf;
    for (int it = 1; it <= opts.max_iter_jacobi; ++it) {
        if (opts.parallel) kernels::jacobi_sweep_parallel(system, q, p, pin, opts, next);
        else kernels::jacobi_sweep_serial(system, q, p, pin, opts, next);

        double step = 0.0;
        for (int z = 0; z < n; ++z) {
            const double d = next[z] - p[z];
            step = std::max(step, std::abs(d));
            // Updates land up to one inner tolerance below the exact endpoint.
            if (d < -2.0 * opts.tol_inner * (1.0 + std::abs(p[z]))) report.monotone_certificate = false;
        }
        p.swap(next);
        if (opts.record_iterates) report.iterates.push_back(p);
        report.jacobi_iterations = it;

        const double residual = kernels::residual_serial(system, q, p);
        if (std::isnan(residual)) throw Error(ErrorCode::NonFinite, "supply evaluation produced nan");
        if (residual < best_residual || std::isnan(best_residual)) {
            best_residual = residual;
            best = p;
        }
        // Iterates rise to p*, so the distance left is about step * rho / (1 - rho)
        // for the observed contraction rho. Steps at the inner-root noise level count as zero.
        double tail = 0.0;
        if (step > 4.0 * opts.tol_inner * (1.0 + p.cwiseAbs().maxCoeff())) {
            const double rho = step / prev_step;
            tail = rho < 1.0 ? step * rho / (1.0 - rho) : kInf;
        }
        prev_step = step;
        if (residual <= residual_tol && step <= opts.tol_outer && tail <= opts.tol_outer) {
            report.p_star = p;
            report.residual = residual;
            report.converged = true;
            return report;
        }
    }
    report.p_star = best;
    report.residual = best_residual;
    std::ostringstream msg;
    msg << "Jacobi iteration did not converge in " << opts.max_iter_jacobi
        << " sweeps (best residual " << best_residual << ")";
    throw SolveError(ErrorCode::MaxIterExceeded, msg.str(), std::move(report));
}

namespace {

struct PinnedPoint {
    double pin;
    SolveReport report;
    double psi;
};

class Dichotomy {
public:
    Dichotomy(const SupplySystem& system, const Vec& q, const Normalization& norm, double K,
              const SolverOptions& opts, int pin)
        : system_(system), q_(q), norm_(norm), K_(K), opts_(opts), pinned_opts_(opts), pin_(pin) {
        // psi(pin) inherits the pinned solve error amplified by conditioning;
        // solve a little tighter than the bracket tolerance. Residuals are in
        // quantity units, so both caps scale with the size of the target.
        const double scale = std::max(1.0, q.cwiseAbs().maxCoeff());
        pinned_opts_.tol_outer = std::max(std::min(opts.tol_outer, 1e-2 * opts.tol_bracket * scale), 1e-13 * scale);
    }

    SolveReport run(std::optional<double> initial_pin) {
        const Bounds& bounds = system_.bounds();
        const double margin = bracket_margin(opts_);
        double guess = initial_pin.value_or(K_);
        guess = bounds.clamp_inside(pin_, guess, margin);

        // Pinned problems may be unsolvable for some pin values (bounded
        // matching functions); find one that solves before expanding.
        std::optional<PinnedPoint> first = try_solve_at(guess, std::nullopt);
        for (double probe = 1.0; !first && probe <= 0x1p20; probe *= 2.0) {
            for (double sign : {-1.0, 1.0}) {
                const double cand = bounds.clamp_inside(pin_, guess + sign * probe, margin);
                first = try_solve_at(cand, std::nullopt);
                if (first) break;
            }
        }
        // The feasible window can be narrower than the doubling probes'
        // spacing; scan dyadic points near the guess, finest last.
        for (double h = 0.5; !first && h >= 0x1p-7; h *= 0.5) {
            for (double k = 1.0; !first && k * h <= 8.0; k += 2.0) {
                for (double sign : {-1.0, 1.0}) {
                    first = try_solve_at(bounds.clamp_inside(pin_, guess + sign * k * h, margin), std::nullopt);
                    if (first) break;
                }
            }
        }
        if (!first) throw Error(ErrorCode::BracketNotFound, "no pin value admits a pinned solution");
        std::optional<PinnedPoint> lower;
        std::optional<PinnedPoint> upper;
        if (first->psi <= K_) lower = first; else upper = first;

        // Step 0: expand the pin geometrically until psi straddles K. A pin that
        // admits no solution caps the search, which then halves toward it.
        double step = std::max(1.0, std::abs(K_ - first->psi));
        double ceiling = kInf;
        double floor_pin = -kInf;
        int attempts = 0;
        const int budget = 4 * opts_.max_bracket_expansions;
        while (!lower || !upper) {
            if (attempts++ >= budget) {
                throw Error(ErrorCode::BracketNotFound, "normalization level is outside the achievable range");
            }
            if (!upper) {
                double cand = std::isfinite(ceiling) ? lower->pin + 0.5 * (ceiling - lower->pin) : lower->pin + step;
                cand = bounds.clamp_inside(pin_, cand, margin);
                if (cand <= lower->pin || (std::isfinite(ceiling) && ceiling - lower->pin < opts_.tol_bracket)) {
                    throw Error(ErrorCode::BracketNotFound, "normalization level exceeds the achievable range");
                }
                auto pt = try_solve_at(cand, lower->report.p_star);
                if (!pt) {
                    ceiling = cand;
                    continue;
                }
                if (pt->psi >= K_) upper = pt; else lower = pt;
            } else {
                double cand = std::isfinite(floor_pin) ? upper->pin - 0.5 * (upper->pin - floor_pin) : upper->pin - step;
                cand = bounds.clamp_inside(pin_, cand, margin);
                if (cand >= upper->pin || (std::isfinite(floor_pin) && upper->pin - floor_pin < opts_.tol_bracket)) {
                    throw Error(ErrorCode::BracketNotFound, "normalization level is below the achievable range");
                }
                auto pt = try_solve_at(cand, std::nullopt);
                if (!pt) {
                    floor_pin = cand;
                    continue;
                }
                if (pt->psi <= K_) lower = pt; else upper = pt;
            }
            step *= 2.0;
        }
        note_best(*lower);
        note_best(*upper);

        snap_bracket(*lower, *upper);
        lower_p_ = lower->report.p_star;
        upper_p_ = upper->report.p_star;

        double lo = lower->pin;
        double hi = upper->pin;
        std::optional<Vec> warm = lower->report.p_star;
        double warm_pin = lower->pin;
        history_.emplace_back(lo, hi);

        for (int k = 1; k <= opts_.max_iter_bracket; ++k) {
            if (hi - lo < opts_.tol_bracket && std::abs(best_->psi - K_) <= opts_.tol_bracket) {
                return finish(k - 1);
            }
            const double mid = lo + 0.5 * (hi - lo);
            if (mid <= lo || mid >= hi) break;
            PinnedPoint pt = solve_at(mid, warm_pin <= mid ? warm : std::nullopt);
            note_best(pt);
            if (pt.psi <= K_) {
                lo = mid;
                warm = pt.report.p_star;
                warm_pin = mid;
                lower_p_ = pt.report.p_star;
            } else {
                hi = mid;
                upper_p_ = pt.report.p_star;
            }
            history_.emplace_back(lo, hi);
        }
        if (hi - lo < opts_.tol_bracket && std::abs(best_->psi - K_) <= opts_.tol_bracket) {
            return finish(opts_.max_iter_bracket);
        }
        SolveReport best = best_->report;
        best.bracket_history = history_;
        best.pinned_solves = solves_;
        best.jacobi_iterations = jacobi_total_;
        std::ostringstream msg;
        msg << "dichotomy stopped with |psi - K| = " << std::abs(best_->psi - K_);
        throw SolveError(ErrorCode::MaxIterExceeded, msg.str(), std::move(best));
    }

    /// Coordinate that moved most across the last bracket: pinning it instead
    /// flattens psi when the anchor sits on a near-degenerate direction.
    int steepest() const {
        if (lower_p_.size() == 0 || upper_p_.size() == 0) return pin_;
        int z;
        (upper_p_ - lower_p_).cwiseAbs().maxCoeff(&z);
        return z;
    }

private:
    PinnedPoint solve_at(double pin_value, const std::optional<Vec>& warm) {
        SolveReport r = solve_pinned(system_, q_, pin_, pin_value, pinned_opts_, warm);
        ++solves_;
        jacobi_total_ += r.jacobi_iterations;
        const double psi = norm_(r.p_star);
        if (std::isnan(psi)) throw Error(ErrorCode::NonFinite, "normalization returned nan");
        return PinnedPoint{pin_value, std::move(r), psi};
    }

    std::optional<PinnedPoint> try_solve_at(double pin_value, const std::optional<Vec>& warm) {
        try {
            return solve_at(pin_value, warm);
        } catch (const Error& e) {
            switch (e.code()) {
                case ErrorCode::NoBracket:
                case ErrorCode::EnvelopeNotDownwardResponsive:
                    return std::nullopt;
                default:
                    throw;
            }
        }
    }

    void note_best(const PinnedPoint& pt) {
        if (!best_ || std::abs(pt.psi - K_) < std::abs(best_->psi - K_)) best_ = pt;
    }

    // Put both ends on a dyadic grid of spacing g ~ width / 4 so every midpoint
    // is exact and widths halve exactly. Outward first; near the edge of a
    // feasible pin window, inward, shrinking to the side that holds K and
    // refining the grid.
    void snap_bracket(PinnedPoint& lower, PinnedPoint& upper) {
        auto spacing = [](double w) { return std::ldexp(1.0, std::ilogb(w) - 2); };
        {
            const double g = spacing(upper.pin - lower.pin);
            const double a = std::floor(lower.pin / g) * g;
            const double b = std::ceil(upper.pin / g) * g;
            auto pa = a == lower.pin ? std::optional<PinnedPoint>(lower) : try_solve_at(a, std::nullopt);
            auto pb = pa && b != upper.pin ? try_solve_at(b, upper.report.p_star) : std::optional<PinnedPoint>(upper);
            if (pa && pb) {
                lower = *pa;
                upper = *pb;
                note_best(lower);
                note_best(upper);
                return;
            }
        }
        PinnedPoint lo = lower;
        PinnedPoint hi = upper;
        while (hi.pin - lo.pin >= opts_.tol_bracket) {
            const double g = spacing(hi.pin - lo.pin);
            const double a = std::ceil(lo.pin / g) * g;
            const double b = std::floor(hi.pin / g) * g;
            if (a == lo.pin && b == hi.pin) break;
            if (a != lo.pin) {
                auto pa = try_solve_at(a, lo.report.p_star);
                if (!pa) break;
                note_best(*pa);
                if (pa->psi > K_) {
                    hi = *pa;
                    continue;
                }
                lo = *pa;
            }
            if (b != hi.pin) {
                auto pb = try_solve_at(b, lo.report.p_star);
                if (!pb) break;
                note_best(*pb);
                if (pb->psi < K_) {
                    lo = *pb;
                    continue;
                }
                hi = *pb;
            }
        }
        lower = lo;
        upper = hi;
    }

    SolveReport finish(int bracket_steps) {
        SolveReport out = best_->report;
        out.normalization_value = best_->psi;
        out.bracket_iterations = bracket_steps;
        out.bracket_history = history_;
        out.pinned_solves = solves_;
        out.jacobi_iterations = jacobi_total_;
        return out;
    }

    const SupplySystem& system_;
    const Vec& q_;
    const Normalization& norm_;
    double K_;
    const SolverOptions& opts_;
    SolverOptions pinned_opts_;
    int pin_;
    int solves_ = 0;
    int jacobi_total_ = 0;
    std::optional<PinnedPoint> best_;
    std::vector<std::pair<double, double>> history_;
    Vec lower_p_;
    Vec upper_p_;
};

}  // namespace

SolveReport solve_normalized(const SupplySystem& system, const Vec& q, const Normalization& norm,
                             double K, const SolverOptions& opts, std::optional<double> initial_pin) {
    opts.validate();
    check_target(system, q);
    if (!norm.eval) throw Error(ErrorCode::InvalidArgument, "normalization has no evaluator");
    if (!(K > norm.range_lower && K < norm.range_upper) || !std::isfinite(K)) {
        throw Error(ErrorCode::InvalidArgument, "normalization level outside the normalization's range");
    }
    const int pin = system.anchor();
    if (norm.kind == NormalizationKind::Coordinate && norm.coordinate == pin) {
        SolveReport r = solve_pinned(system, q, pin, K, opts);
        r.normalization_value = norm(r.p_star);
        return r;
    }
    Dichotomy d(system, q, norm, K, opts, pin);
    try {
        return d.run(initial_pin);
    } catch (const SolveError& e) {
        // psi too steep in the anchor to resolve K: retry pinned on the
        // coordinate carrying the steep direction, started at its best value.
        const int z = d.steepest();
        if (e.code() != ErrorCode::MaxIterExceeded || z == pin || e.best().p_star.size() == 0) throw;
        try {
            return Dichotomy(system, q, norm, K, opts, z).run(e.best().p_star[z]);
        } catch (const Error&) {
            throw e;
        }
    }
}

}  // namespace supplyeq

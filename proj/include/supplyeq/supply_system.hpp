#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace supplyeq {

using Vec = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Open box E = prod_z (lower_z, upper_z). Infinite endpoints are allowed.
struct Bounds {
    Vec lower;
    Vec upper;

    static Bounds unbounded(int dim);

    int dim() const { return static_cast<int>(lower.size()); }
    bool contains(const Vec& p) const;
    /// Throws InvalidArgument unless lower_z < upper_z for every coordinate.
    void validate() const;
    /// Closest admissible value to t for coordinate z, kept margin (1 + |endpoint|) inside finite endpoints.
    double clamp_inside(int z, double t, double margin) const;
};

/// Ordering z_1..z_n of the coordinates (z_1 is the pinned anchor) together
/// with upper envelopes: envelope(p, k) bounds Q_{order[k]}(p) from above and
/// only reads p at order[0..k].
struct SubsolutionPlan {
    std::vector<int> order;
    std::function<double(const Vec& p, int k)> envelope;
};

struct SubsolutionHints {
    int default_anchor = 0;
    /// Plan anchored at the given coordinate, or nullopt when the system has
    /// no envelope construction for that anchor.
    std::function<std::optional<SubsolutionPlan>(int anchor)> plan_for;
    /// When the plan is missing or its envelopes cannot be pushed under target,
    /// build the subsolution from above instead of failing.
    bool descend_when_plan_fails = false;
};

/// Map p -> Q(p) with sum_z Q_z(p) = c on the open box. Immutable once built;
/// every callable must be pure so solves may share a system across threads.
class SupplySystem {
public:
    using EvalFn = std::function<Vec(const Vec&)>;
    using CoordinateFn = std::function<double(const Vec&, int)>;
    /// Specialised root of t -> Q_z(t, p_-z) = target returning
    /// inf{t : Q_z(t, p_-z) >= target}; nullopt means "use the generic search".
    using CoordinateRootFn = std::function<std::optional<double>(const Vec&, int, double)>;

    SupplySystem(int dim, EvalFn eval, Bounds bounds, double balance_constant);

    SupplySystem& set_coordinate_eval(CoordinateFn f);
    SupplySystem& set_coordinate_root(CoordinateRootFn f);
    SupplySystem& set_hints(SubsolutionHints hints);
    SupplySystem& set_name(std::string name);

    int dim() const { return dim_; }
    const Bounds& bounds() const { return bounds_; }
    double balance_constant() const { return balance_constant_; }
    const std::optional<SubsolutionHints>& hints() const { return hints_; }
    const CoordinateRootFn& coordinate_root() const { return coordinate_root_; }
    const std::string& name() const { return name_; }

    /// Unchecked evaluation; may return +-inf for extreme prices.
    Vec operator()(const Vec& p) const { return eval_(p); }
    double coordinate(const Vec& p, int z) const;

    /// Anchor used by the normalized solver: the hints' default, else 0.
    int anchor() const { return hints_ ? hints_->default_anchor : 0; }

private:
    int dim_;
    EvalFn eval_;
    CoordinateFn coordinate_eval_;
    CoordinateRootFn coordinate_root_;
    Bounds bounds_;
    double balance_constant_;
    std::optional<SubsolutionHints> hints_;
    std::string name_ = "supply";
};

/// Checked Q(p): OutOfBounds outside the open box, NonFinite on inf/nan output.
Vec eval_supply(const SupplySystem& system, const Vec& p);

double sup_norm(const Vec& v);

enum class NormalizationKind { Coordinate, Mean, Max, Min, Custom };

/// Scalar anchor psi with psi(p + t 1) = psi(p) + t.
struct Normalization {
    NormalizationKind kind = NormalizationKind::Coordinate;
    int coordinate = 0;
    std::function<double(const Vec&)> eval;
    double range_lower = -kInf;
    double range_upper = kInf;
    std::string label;

    static Normalization coordinate_of(int z);
    static Normalization mean();
    static Normalization max();
    static Normalization min();

    double operator()(const Vec& p) const { return eval(p); }
    /// Analytic (sub)gradient for the built-in kinds, central differences otherwise.
    Vec gradient(const Vec& p) const;
};

/// psi(p) = the unique t with raw(p - t 1) = 0. `raw` must be weakly
/// increasing coordinatewise and strictly increasing along the diagonal.
Normalization renormalize(std::function<double(const Vec&)> raw, std::string label = "custom");

}  // namespace supplyeq

#include "supplyeq/discrete_choice.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

namespace supplyeq {

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double gumbel(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    return -std::log(-std::log(u));
}

void check_draws(const DrawConfig& cfg) {
    if (cfg.draws < 1) throw Error(ErrorCode::InvalidArgument, "draw count must be positive");
}

Vec softmax_subset(const Vec& delta, const std::vector<char>* active) {
    const int n = static_cast<int>(delta.size());
    double hi = -kInf;
    for (int z = 0; z < n; ++z) if (!active || (*active)[z]) hi = std::max(hi, delta[z]);
    Vec s = Vec::Zero(n);
    for (int z = 0; z < n; ++z) if (!active || (*active)[z]) s[z] = std::exp(delta[z] - hi);
    return s / s.sum();
}

// Interval of taste values v on which good z is the (lowest-index) argmax of
// intercept + slope v among the active goods.
struct TasteInterval {
    double lo = -kInf;
    bool lo_closed = false;
    double hi = kInf;
    bool hi_closed = false;
    bool empty = false;
};

TasteInterval winning_interval(const ScalarTaste& taste, const Vec& delta, int z, const std::vector<char>* active) {
    TasteInterval iv;
    iv.lo = taste.lower;
    const int n = static_cast<int>(delta.size());
    const double cz = taste.intercept(z, delta[z]);
    const double sz = taste.slope(z, delta[z]);
    for (int k = 0; k < n && !iv.empty; ++k) {
        if (k == z || (active && !(*active)[k])) continue;
        // z must beat k strictly when k has the lower index, weakly otherwise.
        const bool strict = k < z;
        const double dc = cz - taste.intercept(k, delta[k]);
        const double ds = sz - taste.slope(k, delta[k]);
        if (ds == 0.0) {
            if (strict ? !(dc > 0.0) : !(dc >= 0.0)) iv.empty = true;
            continue;
        }
        const double cut = -dc / ds;
        if (ds > 0.0) {
            if (cut > iv.lo || (cut == iv.lo && strict)) {
                iv.lo = cut;
                iv.lo_closed = !strict;
            }
        } else {
            if (cut < iv.hi || (cut == iv.hi && strict)) {
                iv.hi = cut;
                iv.hi_closed = !strict;
            }
        }
    }
    if (iv.lo > iv.hi) iv.empty = true;
    return iv;
}

Vec taste_shares(const ScalarTaste& taste, const Vec& delta, const std::vector<char>* active, bool continuum) {
    const int n = static_cast<int>(delta.size());
    const auto& v = taste.sorted_draws;
    Vec s = Vec::Zero(n);
    for (int z = 0; z < n; ++z) {
        if (active && !(*active)[z]) continue;
        const TasteInterval iv = winning_interval(taste, delta, z, active);
        if (iv.empty) continue;
        if (continuum) {
            const double hi = std::isfinite(iv.hi) ? taste.cdf(iv.hi) : 1.0;
            const double lo = std::isfinite(iv.lo) ? taste.cdf(iv.lo) : 0.0;
            s[z] = std::max(0.0, hi - lo);
            continue;
        }
        const auto first = iv.lo_closed ? std::lower_bound(v.begin(), v.end(), iv.lo)
                                        : std::upper_bound(v.begin(), v.end(), iv.lo);
        const auto last = iv.hi_closed ? std::upper_bound(v.begin(), v.end(), iv.hi)
                                       : std::lower_bound(v.begin(), v.end(), iv.hi);
        if (last > first) s[z] = static_cast<double>(last - first);
    }
    if (continuum) return s / s.sum();
    return s / static_cast<double>(v.size());
}

// Counting kernel over the shock matrix; `active` restricts the choice set.
template <bool Parallel>
Vec argmax_shares(const DemandModel& model, const Vec& delta, const std::vector<char>* active) {
    const int n = model.goods();
    const long R = model.draws();
    const Mat& eps = model.shocks();
    const bool additive = model.additive();
    std::vector<long> counts(n, 0);
    bool degenerate = false;

#pragma omp parallel if (Parallel)
    {
        std::vector<long> local(n, 0);
        bool bad = false;
#pragma omp for schedule(static)
        for (long r = 0; r < R; ++r) {
            int best = -1;
            double best_u = -kInf;
            for (int z = 0; z < n; ++z) {
                if (active && !(*active)[z]) continue;
                const double u = additive ? delta[z] + eps(z, r) : model.utility(z, delta[z], eps(z, r));
                if (!std::isfinite(u)) bad = true;
                if (best < 0 || u > best_u) {
                    best = z;
                    best_u = u;
                }
            }
            if (best >= 0) ++local[best];
        }
#pragma omp critical
        {
            for (int z = 0; z < n; ++z) counts[z] += local[z];
            degenerate = degenerate || bad;
        }
    }
    if (degenerate) throw Error(ErrorCode::DegenerateUtility, "utility evaluated to a non-finite value");
    Vec s(n);
    for (int z = 0; z < n; ++z) s[z] = static_cast<double>(counts[z]) / static_cast<double>(R);
    return s;
}

void check_delta(const DemandModel& model, const Vec& delta) {
    if (delta.size() != model.goods()) throw Error(ErrorCode::DimensionMismatch, "delta has the wrong length");
    if (!delta.allFinite()) throw Error(ErrorCode::NonFinite, "delta must be finite");
    if (!model.bounds().contains(delta)) throw Error(ErrorCode::OutOfBounds, "delta outside the model's domain");
}

Vec simulated_shares(const DemandModel& model, const Vec& delta, const std::vector<char>* active, bool parallel) {
    if (!model.simulated()) throw Error(ErrorCode::InvalidArgument, "model " + model.name() + " has no draws");
    if (model.scalar_taste()) return taste_shares(*model.scalar_taste(), delta, active, false);
    return parallel ? argmax_shares<true>(model, delta, active) : argmax_shares<false>(model, delta, active);
}

Vec model_shares(const DemandModel& model, const Vec& delta, const std::vector<char>* active) {
    if (model.simulated()) return simulated_shares(model, delta, active, true);
    if (active) {
        // Only the logit closed form is available without draws.
        return softmax_subset(delta, active);
    }
    return (*model.closed_form())(delta);
}

// inf{t : sigma_z(t, delta_-z) >= target} for delta + eps: good z wins draw r
// exactly when delta_z exceeds max_{k != z}(delta_k + eps_k) - eps_z.
std::optional<double> additive_threshold_root(const DemandModel& model, const Vec& delta, int z, double target) {
    const long R = model.draws();
    const long needed = static_cast<long>(std::ceil(target * static_cast<double>(R) - 1e-9));
    if (needed < 1 || needed > R) return std::nullopt;
    const Mat& eps = model.shocks();
    const int n = model.goods();
    std::vector<double> theta(static_cast<std::size_t>(R));
#pragma omp parallel for schedule(static)
    for (long r = 0; r < R; ++r) {
        double m = -kInf;
        for (int k = 0; k < n; ++k) if (k != z) m = std::max(m, delta[k] + eps(k, r));
        theta[static_cast<std::size_t>(r)] = m - eps(z, r);
    }
    auto nth = theta.begin() + (needed - 1);
    std::nth_element(theta.begin(), nth, theta.end());
    return *nth;
}

}  // namespace

Vec demand_logit(const Vec& delta) {
    if (!delta.allFinite()) throw Error(ErrorCode::NonFinite, "delta must be finite");
    return softmax_subset(delta, nullptr);
}

Vec invert_logit(const Vec& shares, int benchmark) {
    validate_shares(shares);
    if (benchmark < 0 || benchmark >= shares.size()) throw Error(ErrorCode::InvalidArgument, "benchmark out of range");
    Vec delta = (shares.array() / shares[benchmark]).log().matrix();
    delta[benchmark] = 0.0;
    return delta;
}

void validate_shares(const Vec& shares) {
    if (shares.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least two goods");
    for (Eigen::Index z = 0; z < shares.size(); ++z) {
        if (!(shares[z] > 0.0) || !std::isfinite(shares[z])) {
            throw Error(ErrorCode::InvalidArgument, "shares must be positive and finite");
        }
    }
    if (std::abs(shares.sum() - 1.0) > 1e-12) throw Error(ErrorCode::BalanceViolated, "shares must sum to 1");
}

std::string_view to_string(DemandFamily family) noexcept {
    switch (family) {
        case DemandFamily::Logit: return "logit";
        case DemandFamily::RCLogit: return "rc-logit";
        case DemandFamily::PureCharacteristics: return "pure-characteristics";
        case DemandFamily::Bridge: return "bridge";
        case DemandFamily::Custom: return "custom";
    }
    return "unknown";
}

DemandFamily demand_family_from_string(std::string_view name) {
    for (auto f : {DemandFamily::Logit, DemandFamily::RCLogit, DemandFamily::PureCharacteristics,
                   DemandFamily::Bridge, DemandFamily::Custom}) {
        if (to_string(f) == name) return f;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown demand family '" + std::string(name) + "'");
}

DemandModel DemandModel::logit(int goods) {
    if (goods < 2) throw Error(ErrorCode::InvalidArgument, "need at least two goods");
    DemandModel m;
    m.family_ = DemandFamily::Logit;
    m.name_ = "logit";
    m.goods_ = goods;
    m.additive_ = true;
    m.utility_ = [](int, double delta, double eps) { return delta + eps; };
    m.closed_form_ = [](const Vec& d) { return demand_logit(d); };
    m.bounds_ = Bounds::unbounded(goods);
    return m;
}

DemandModel DemandModel::logit_mc(int goods, DrawConfig draws) {
    check_draws(draws);
    DemandModel m = logit(goods);
    m.name_ = "logit-mc";
    m.draws_ = draws.draws;
    m.shocks_.resize(goods, draws.draws);
    std::mt19937_64 rng(draws.seed);
    for (long r = 0; r < draws.draws; ++r) {
        for (int z = 0; z < goods; ++z) m.shocks_(z, r) = gumbel(rng);
    }
    return m;
}

DemandModel DemandModel::rc_logit(Mat characteristics, Vec sigma, DrawConfig draws) {
    check_draws(draws);
    const int goods = static_cast<int>(characteristics.rows());
    if (goods < 2) throw Error(ErrorCode::InvalidArgument, "need at least two goods");
    if (characteristics.cols() != sigma.size()) {
        throw Error(ErrorCode::DimensionMismatch, "one taste scale per characteristic");
    }
    DemandModel m = logit(goods);
    m.family_ = DemandFamily::RCLogit;
    m.name_ = "rc-logit";
    m.draws_ = draws.draws;
    m.shocks_.resize(goods, draws.draws);
    std::mt19937_64 rng(draws.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int d = static_cast<int>(sigma.size());
    Vec nu(d);
    for (long r = 0; r < draws.draws; ++r) {
        for (int k = 0; k < d; ++k) nu[k] = sigma[k] * normal(rng);
        for (int z = 0; z < goods; ++z) m.shocks_(z, r) = characteristics.row(z).dot(nu) + gumbel(rng);
    }
    // Without taste dispersion the mixture is plain logit.
    if (!(sigma.array() == 0.0).all()) m.closed_form_.reset();
    return m;
}

DemandModel DemandModel::pure_characteristics(Vec characteristics, DrawConfig draws) {
    check_draws(draws);
    const int goods = static_cast<int>(characteristics.size());
    if (goods < 2) throw Error(ErrorCode::InvalidArgument, "need at least two goods");
    DemandModel m;
    m.family_ = DemandFamily::PureCharacteristics;
    m.name_ = "pure-characteristics";
    m.goods_ = goods;
    m.draws_ = draws.draws;
    m.additive_ = true;
    m.bounds_ = Bounds::unbounded(goods);
    m.utility_ = [](int, double delta, double eps) { return delta + eps; };

    ScalarTaste taste;
    std::mt19937_64 rng(draws.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    taste.sorted_draws.resize(static_cast<std::size_t>(draws.draws));
    for (auto& v : taste.sorted_draws) v = normal(rng);
    std::sort(taste.sorted_draws.begin(), taste.sorted_draws.end());
    taste.intercept = [](int, double delta) { return delta; };
    taste.slope = [x = characteristics](int z, double) { return x[z]; };
    taste.cdf = normal_cdf;
    m.closed_form_ = [taste](const Vec& d) { return taste_shares(taste, d, nullptr, true); };
    m.taste_ = std::move(taste);
    return m;
}

DemandModel DemandModel::bridge(Vec tolls, DrawConfig draws) {
    check_draws(draws);
    const int goods = static_cast<int>(tolls.size());
    if (goods < 2) throw Error(ErrorCode::InvalidArgument, "need at least two lanes");
    DemandModel m;
    m.family_ = DemandFamily::Bridge;
    m.name_ = "bridge";
    m.goods_ = goods;
    m.draws_ = draws.draws;
    // delta = -log(waiting time) < 0 keeps utility increasing in eps.
    m.bounds_ = Bounds{Vec::Constant(goods, -kInf), Vec::Zero(goods)};
    m.utility_ = [tolls](int z, double delta, double eps) { return -tolls[z] + delta * std::exp(-eps); };

    // Each lane is a line in w = e^{-eps} > 0.
    ScalarTaste taste;
    std::mt19937_64 rng(draws.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    taste.sorted_draws.resize(static_cast<std::size_t>(draws.draws));
    for (auto& v : taste.sorted_draws) v = std::exp(-normal(rng));
    std::sort(taste.sorted_draws.begin(), taste.sorted_draws.end());
    taste.lower = 0.0;
    taste.intercept = [tolls](int z, double) { return -tolls[z]; };
    taste.slope = [](int, double delta) { return delta; };
    taste.cdf = [](double w) { return w > 0.0 ? normal_cdf(std::log(w)) : 0.0; };
    m.closed_form_ = [taste](const Vec& d) { return taste_shares(taste, d, nullptr, true); };
    m.taste_ = std::move(taste);
    return m;
}

DemandModel DemandModel::custom(std::string name, UtilityFn utility, Mat shocks, Bounds bounds) {
    if (shocks.rows() < 2 || shocks.cols() < 1) {
        throw Error(ErrorCode::InvalidArgument, "shock matrix must be goods x draws with at least two goods");
    }
    if (bounds.dim() != shocks.rows()) throw Error(ErrorCode::DimensionMismatch, "bounds and goods disagree");
    bounds.validate();
    DemandModel m;
    m.family_ = DemandFamily::Custom;
    m.name_ = std::move(name);
    m.goods_ = static_cast<int>(shocks.rows());
    m.draws_ = static_cast<long>(shocks.cols());
    m.utility_ = std::move(utility);
    m.shocks_ = std::move(shocks);
    m.bounds_ = std::move(bounds);
    return m;
}

Vec demand_mc(const DemandModel& model, const Vec& delta) {
    check_delta(model, delta);
    return simulated_shares(model, delta, nullptr, true);
}

Vec demand_mc_serial(const DemandModel& model, const Vec& delta) {
    check_delta(model, delta);
    return simulated_shares(model, delta, nullptr, false);
}

Vec demand(const DemandModel& model, const Vec& delta) {
    check_delta(model, delta);
    return model_shares(model, delta, nullptr);
}

SupplySystem build_demand_system(const DemandModel& model) {
    auto shared = std::make_shared<const DemandModel>(model);
    const int n = model.goods();
    SupplySystem system(
        n, [shared](const Vec& delta) { return model_shares(*shared, delta, nullptr); }, model.bounds(), 1.0);
    system.set_name("demand/" + model.name());
    if (model.simulated() && model.additive() && !model.scalar_taste()) {
        system.set_coordinate_root([shared](const Vec& delta, int z, double target) {
            return additive_threshold_root(*shared, delta, z, target);
        });
    } else if (!model.simulated()) {
        // Logit: sigma_z = target solves in closed form against the other goods.
        system.set_coordinate_root([n](const Vec& delta, int z, double target) -> std::optional<double> {
            if (!(target > 0.0 && target < 1.0)) return std::nullopt;
            Vec others(n - 1);
            for (int k = 0, j = 0; k < n; ++k) if (k != z) others[j++] = delta[k];
            const double hi = others.maxCoeff();
            const double lse = hi + std::log((others.array() - hi).exp().sum());
            return lse + std::log(target) - std::log1p(-target);
        });
    }

    SubsolutionHints hints;
    hints.default_anchor = 0;
    hints.plan_for = [shared, n](int anchor) -> std::optional<SubsolutionPlan> {
        if (anchor < 0 || anchor >= n) return std::nullopt;
        SubsolutionPlan plan;
        plan.order.push_back(anchor);
        for (int z = 0; z < n; ++z) if (z != anchor) plan.order.push_back(z);
        plan.envelope = [shared, n, order = plan.order](const Vec& delta, int k) {
            // Removing goods from the choice set can only raise a share.
            std::vector<char> active(static_cast<std::size_t>(n), 0);
            for (int j = 0; j <= k; ++j) active[static_cast<std::size_t>(order[j])] = 1;
            return model_shares(*shared, delta, &active)[order[k]];
        };
        return plan;
    };
    system.set_hints(std::move(hints));
    return system;
}

double simulated_share_tolerance(const DemandModel& model) {
    if (!model.simulated()) return 0.0;
    // Off-anchor shares sit within 1/R below target; the anchor absorbs the rest.
    return static_cast<double>(model.goods() + 1) / static_cast<double>(model.draws());
}

InversionResult invert_demand(const DemandModel& model, const Vec& shares, const Normalization& norm, double K,
                              const SolverOptions& opts) {
    validate_shares(shares);
    if (shares.size() != model.goods()) throw Error(ErrorCode::DimensionMismatch, "one share per good");
    const SupplySystem system = build_demand_system(model);
    SolverOptions o = opts;
    if (model.simulated()) {
        o.residual_floor = std::max(o.residual_floor, simulated_share_tolerance(model));
        // Common random numbers keep delta + eps and the scalar-taste models
        // monotone by construction; a custom utility has to be probed.
        if (model.family() == DemandFamily::Custom) {
            SamplingOptions probe;
            probe.samples = 20;
            probe.tol = 0.0;
            const auto report = check_weak_substitutes(system, 0.05, probe);
            if (!report.passed) {
                throw Error(ErrorCode::MCNonMonotone, "simulated shares violate weak substitutes; raise the draw count");
            }
        }
    }
    InversionResult out;
    out.report = solve_normalized(system, shares, norm, K, o);
    out.delta = out.report.p_star;
    return out;
}

InversionResult invert_demand(const DemandModel& model, const Vec& shares, double K, const SolverOptions& opts) {
    auto norm = Normalization::coordinate_of(0);
    norm.label = "delta[0]";
    return invert_demand(model, shares, norm, K, opts);
}

PropertyReport check_utility_regularity(const DemandModel& model, const UtilityProbeGrid& grid) {
    PropertyReport report;
    report.property_name = "utility_regularity";
    const double h = grid.h;
    auto record = [&](Violation v) {
        ++report.violation_count;
        if (report.violations.size() < 25) report.violations.push_back(std::move(v));
    };
    for (int z = 0; z < model.goods(); ++z) {
        for (double d : grid.delta) {
            for (double e : grid.eps) {
                ++report.samples_tested;
                const double u = model.utility(z, d, e);
                const double ue = model.utility(z, d, e + h);
                const double ud = model.utility(z, d + h, e);
                Vec at(2);
                at << d, e;
                if (!std::isfinite(u) || !std::isfinite(ue) || !std::isfinite(ud)) {
                    record(Violation{at, {z}, {u, ue, ud}, "utility is not finite"});
                    continue;
                }
                if (!(ue > u)) record(Violation{at, {z}, {u, ue}, "utility not strictly increasing in eps"});
                if (!(ud > u)) record(Violation{at, {z}, {u, ud}, "utility not strictly increasing in delta"});
            }
        }
    }
    // Bounded above: increments along a delta ladder toward the upper end
    // should shrink. Linear growth is reported as a flag, not a failure.
    if (grid.magnitudes.size() >= 3) {
        bool unbounded = false;
        for (int z = 0; z < model.goods() && !unbounded; ++z) {
            const double ub = model.bounds().upper[z];
            auto at = [&](double T) { return std::isfinite(ub) ? ub - 1.0 / T : T; };
            for (double e : grid.eps) {
                std::vector<double> u;
                for (double T : grid.magnitudes) u.push_back(model.utility(z, at(T), e));
                bool growing = true;
                for (std::size_t i = 2; i < u.size(); ++i) {
                    if (!(u[i] - u[i - 1] >= u[i - 1] - u[i - 2] - 1e-12)) growing = false;
                }
                if (growing && u.back() > u.front()) {
                    unbounded = true;
                    break;
                }
            }
        }
        if (unbounded) report.flags.push_back("utility is not bounded above in delta");
    }
    report.passed = report.violation_count == 0;
    return report;
}

GFamily GFamily::linear(double theta) {
    GFamily g;
    g.name = "linear";
    g.g = [theta](double t, double x2) { return t + theta * x2; };
    g.inverse = [theta](double delta, double x2) { return delta - theta * x2; };
    return g;
}

double GFamily::invert(double delta, double x2) const {
    if (inverse) return inverse(delta, x2);
    if (!g) throw Error(ErrorCode::GNotInvertible, "no g function");
    auto f = [&](double t) { return g(t, x2) - delta; };
    const double rising = f(1.0) - f(0.0);
    if (!(rising != 0.0) || std::isnan(rising)) throw Error(ErrorCode::GNotInvertible, "g is flat in t");
    const double sign = rising > 0.0 ? 1.0 : -1.0;
    double lo = delta;
    double hi = delta;
    double step = 1.0;
    int expansions = 0;
    while (sign * f(lo) > 0.0) {
        if (++expansions > 64) throw Error(ErrorCode::GNotInvertible, "could not bracket g^{-1} from below");
        hi = lo;
        lo -= step;
        step *= 2.0;
    }
    step = 1.0;
    expansions = 0;
    while (sign * f(hi) < 0.0) {
        if (++expansions > 64) throw Error(ErrorCode::GNotInvertible, "could not bracket g^{-1} from above");
        lo = hi;
        hi += step;
        step *= 2.0;
    }
    for (int it = 0; it < 200 && hi - lo > 1e-14 * (1.0 + std::abs(lo)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (sign * f(mid) < 0.0) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

Vec residual_xi(const Vec& delta, const Vec& x1, const Vec& x2, const GFamily& g) {
    if (x1.size() != delta.size() || x2.size() != delta.size()) {
        throw Error(ErrorCode::DimensionMismatch, "delta, x1 and x2 must have equal length");
    }
    Vec xi(delta.size());
    for (Eigen::Index z = 0; z < delta.size(); ++z) xi[z] = g.invert(delta[z], x2[z]) - x1[z];
    return xi;
}

}  // namespace supplyeq

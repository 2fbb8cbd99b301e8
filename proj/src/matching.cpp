#include "supplyeq/matching.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace supplyeq {

namespace {

constexpr double kLog2 = 0.69314718055994530942;

// log(e^s + e^t) without overflow.
double log_add(double s, double t) {
    if (s == -kInf) return t;
    if (t == -kInf) return s;
    const double hi = std::max(s, t);
    return hi + std::log1p(std::exp(-std::abs(s - t)));
}

// 1 / (1 + e^x) without overflow.
double logistic_complement(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(x));
}

SecondOrder finite_difference_expansion(const std::function<double(double, double)>& f, double u, double v) {
    const double h = 1e-4 * (1.0 + std::max(std::abs(u), std::abs(v)));
    SecondOrder e;
    e.value = f(u, v);
    const double fup = f(u + h, v);
    const double fum = f(u - h, v);
    const double fvp = f(u, v + h);
    const double fvm = f(u, v - h);
    e.du = (fup - fum) / (2.0 * h);
    e.dv = (fvp - fvm) / (2.0 * h);
    e.duu = (fup - 2.0 * e.value + fum) / (h * h);
    e.dvv = (fvp - 2.0 * e.value + fvm) / (h * h);
    e.duv = (f(u + h, v + h) - f(u + h, v - h) - f(u - h, v + h) + f(u - h, v - h)) / (4.0 * h * h);
    return e;
}

double log_sum_exp(const Vec& v) {
    const double hi = v.maxCoeff();
    if (!std::isfinite(hi)) return hi;
    return hi + std::log((v.array() - hi).exp().sum());
}

}  // namespace

SecondOrder DistanceFunction::expansion(double u, double v) const {
    if (expand) return expand(u, v);
    return finite_difference_expansion(value, u, v);
}

DistanceFunction DistanceFunction::transferable() {
    DistanceFunction d;
    d.name = "transferable";
    d.value = [](double u, double v) { return 0.5 * (u + v); };
    d.expand = [](double u, double v) {
        SecondOrder e;
        e.value = 0.5 * (u + v);
        e.du = 0.5;
        e.dv = 0.5;
        return e;
    };
    return d;
}

DistanceFunction DistanceFunction::exponential() {
    DistanceFunction d;
    d.name = "exponential";
    d.value = [](double u, double v) { return log_add(u, v) - kLog2; };
    d.expand = [](double u, double v) {
        SecondOrder e;
        e.value = log_add(u, v) - kLog2;
        const double w = logistic_complement(v - u);  // e^u / (e^u + e^v)
        e.du = w;
        e.dv = 1.0 - w;
        e.duu = w * (1.0 - w);
        e.dvv = w * (1.0 - w);
        e.duv = -w * (1.0 - w);
        return e;
    };
    return d;
}

DistanceFunction DistanceFunction::from_transfer_utilities(std::function<double(double)> utility_x,
                                                           std::function<double(double)> utility_y,
                                                           std::string name) {
    DistanceFunction d;
    d.name = std::move(name);
    d.value = [ux = std::move(utility_x), uy = std::move(utility_y)](double u, double v) {
        // The frontier point hit along the diagonal solves U(w) - V(w) = u - v.
        const double target = u - v;
        auto gap = [&](double r) {
            const double w = std::exp(r);
            return ux(w) - uy(w) - target;
        };
        double lo = -1.0;
        double hi = 1.0;
        int guard = 0;
        while (gap(lo) > 0.0) {
            lo *= 2.0;
            if (++guard > 60) throw Error(ErrorCode::NoBracket, "frontier search failed below");
        }
        guard = 0;
        while (gap(hi) < 0.0) {
            hi *= 2.0;
            if (++guard > 60) throw Error(ErrorCode::NoBracket, "frontier search failed above");
        }
        for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo)); ++it) {
            const double mid = lo + 0.5 * (hi - lo);
            if (mid <= lo || mid >= hi) break;
            if (gap(mid) < 0.0) lo = mid; else hi = mid;
        }
        const double r = lo + 0.5 * (hi - lo);
        return u - ux(std::exp(r));
    };
    return d;
}

DistanceFunction DistanceFunction::log_transfer_fixture(double cx, double cy) {
    if (!(cx > 0.0) || !(cy > 0.0)) throw Error(ErrorCode::InvalidArgument, "fixture curvatures must be positive");
    auto d = from_transfer_utilities([cx](double w) { return cx * std::log(w); },
                                     [cy](double w) { return -cy * std::log(w); }, "log_transfer_fixture");
    const double wu = cy / (cx + cy);
    const double wv = cx / (cx + cy);
    auto value = d.value;
    d.expand = [value, wu, wv](double u, double v) {
        SecondOrder e;
        e.value = value(u, v);
        e.du = wu;
        e.dv = wv;
        return e;
    };
    return d;
}

std::string_view to_string(FamilyKind kind) noexcept {
    switch (kind) {
        case FamilyKind::TU: return "TU";
        case FamilyKind::NTU: return "NTU";
        case FamilyKind::ITU: return "ITU";
        case FamilyKind::ETU: return "ETU";
    }
    return "TU";
}

FamilyKind family_kind_from_string(std::string_view name) {
    if (name == "TU" || name == "tu") return FamilyKind::TU;
    if (name == "NTU" || name == "ntu") return FamilyKind::NTU;
    if (name == "ITU" || name == "itu") return FamilyKind::ITU;
    if (name == "ETU" || name == "etu") return FamilyKind::ETU;
    throw Error(ErrorCode::InvalidArgument, "unknown matching family '" + std::string(name) + "'");
}

namespace {

void require_finite_table(const Mat& t, const char* what) {
    if (!t.allFinite()) throw Error(ErrorCode::NonFinite, std::string(what) + " has non-finite entries");
    if (t.rows() < 1 || t.cols() < 1) throw Error(ErrorCode::InvalidArgument, std::string(what) + " is empty");
}

void require_same_shape(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "alpha and gamma tables differ in shape");
    }
}

}  // namespace

MatchingFamily MatchingFamily::tu(Mat phi) {
    require_finite_table(phi, "phi");
    MatchingFamily f;
    f.kind_ = FamilyKind::TU;
    f.v_offset_ = Mat::Zero(phi.rows(), phi.cols());
    f.u_offset_ = std::move(phi);
    f.distance_ = DistanceFunction::transferable();
    return f;
}

MatchingFamily MatchingFamily::tu_split(Mat alpha, Mat gamma) {
    require_finite_table(alpha, "alpha");
    require_finite_table(gamma, "gamma");
    require_same_shape(alpha, gamma);
    MatchingFamily f;
    f.kind_ = FamilyKind::TU;
    f.u_offset_ = std::move(alpha);
    f.v_offset_ = std::move(gamma);
    f.has_transfers_ = true;
    f.distance_ = DistanceFunction::transferable();
    return f;
}

MatchingFamily MatchingFamily::ntu(Mat phi) {
    require_finite_table(phi, "phi");
    MatchingFamily f;
    f.kind_ = FamilyKind::NTU;
    f.v_offset_ = Mat::Zero(phi.rows(), phi.cols());
    f.u_offset_ = std::move(phi);
    f.distance_.name = "nontransferable";
    f.distance_.value = [](double u, double v) { return u + v; };
    f.distance_.expand = [](double u, double v) {
        SecondOrder e;
        e.value = u + v;
        e.du = 1.0;
        e.dv = 1.0;
        return e;
    };
    return f;
}

MatchingFamily MatchingFamily::etu(Mat alpha, Mat gamma) {
    require_finite_table(alpha, "alpha");
    require_finite_table(gamma, "gamma");
    require_same_shape(alpha, gamma);
    MatchingFamily f;
    f.kind_ = FamilyKind::ETU;
    f.u_offset_ = std::move(alpha);
    f.v_offset_ = std::move(gamma);
    f.has_transfers_ = true;
    f.distance_ = DistanceFunction::exponential();
    return f;
}

MatchingFamily MatchingFamily::itu(Mat alpha, Mat gamma, DistanceFunction d) {
    require_finite_table(alpha, "alpha");
    require_finite_table(gamma, "gamma");
    require_same_shape(alpha, gamma);
    if (!d.value) throw Error(ErrorCode::InvalidArgument, "ITU family needs a distance function");
    MatchingFamily f;
    f.kind_ = FamilyKind::ITU;
    f.u_offset_ = std::move(alpha);
    f.v_offset_ = std::move(gamma);
    f.has_transfers_ = true;
    f.distance_ = std::move(d);
    return f;
}

const Mat& MatchingFamily::alpha() const { return u_offset_; }
const Mat& MatchingFamily::gamma() const { return v_offset_; }

double MatchingFamily::log_match(int x, int y, double a, double b) const {
    const double u = a + u_offset_(x, y);
    const double v = b + v_offset_(x, y);
    switch (kind_) {
        case FamilyKind::TU: return 0.5 * (u + v);
        case FamilyKind::NTU: return u + v;
        case FamilyKind::ETU: return kLog2 - log_add(-u, -v);
        case FamilyKind::ITU: return -distance_(-u, -v);
    }
    return 0.0;
}

double MatchingFamily::match(int x, int y, double a, double b) const { return std::exp(log_match(x, y, a, b)); }

SecondOrder MatchingFamily::log_match_expansion(int x, int y, double a, double b) const {
    const double u = a + u_offset_(x, y);
    const double v = b + v_offset_(x, y);
    SecondOrder h;
    switch (kind_) {
        case FamilyKind::TU:
            h.value = 0.5 * (u + v);
            h.du = 0.5;
            h.dv = 0.5;
            return h;
        case FamilyKind::NTU:
            h.value = u + v;
            h.du = 1.0;
            h.dv = 1.0;
            return h;
        case FamilyKind::ETU:
        case FamilyKind::ITU: {
            // h(u, v) = -d(-u, -v): first partials keep their sign, second flip.
            const SecondOrder d = distance_.expansion(-u, -v);
            h.value = -d.value;
            h.du = d.du;
            h.dv = d.dv;
            h.duu = -d.duu;
            h.duv = -d.duv;
            h.dvv = -d.dvv;
            return h;
        }
    }
    return h;
}

Mat MatchingFamily::match_matrix(const Vec& a, const Vec& b) const {
    if (a.size() != rows() || b.size() != cols()) {
        throw Error(ErrorCode::DimensionMismatch, "fixed effects do not match the family's table");
    }
    Mat mu(rows(), cols());
    for (int x = 0; x < rows(); ++x) {
        for (int y = 0; y < cols(); ++y) mu(x, y) = match(x, y, a[x], b[y]);
    }
    return mu;
}

void MarketPrimitives::validate() const {
    if (n.size() < 1 || m.size() < 1) throw Error(ErrorCode::InvalidArgument, "market needs at least one type per side");
    if (family.rows() != n.size() || family.cols() != m.size()) {
        throw Error(ErrorCode::DimensionMismatch, "family table shape differs from the type counts");
    }
    if (!x_types.empty() && static_cast<Eigen::Index>(x_types.size()) != n.size()) {
        throw Error(ErrorCode::DimensionMismatch, "x labels differ from x masses");
    }
    if (!y_types.empty() && static_cast<Eigen::Index>(y_types.size()) != m.size()) {
        throw Error(ErrorCode::DimensionMismatch, "y labels differ from y masses");
    }
    if (!n.allFinite() || !m.allFinite() || n.minCoeff() <= 0.0 || m.minCoeff() <= 0.0) {
        throw Error(ErrorCode::InvalidArgument, "masses must be positive and finite");
    }
    const double sn = n.sum();
    const double sm = m.sum();
    if (std::abs(sn - sm) > 1e-9 * (1.0 + sn)) {
        std::ostringstream msg;
        msg << "total x mass " << sn << " differs from total y mass " << sm;
        throw Error(ErrorCode::BalanceViolated, msg.str());
    }
}

MarketPrimitives make_market(Vec n, Vec m, MatchingFamily family) {
    MarketPrimitives market{{}, {}, std::move(n), std::move(m), std::move(family)};
    for (int x = 0; x < market.nx(); ++x) market.x_types.push_back("x" + std::to_string(x + 1));
    for (int y = 0; y < market.ny(); ++y) market.y_types.push_back("y" + std::to_string(y + 1));
    market.validate();
    return market;
}

Vec matching_prices(const Vec& a, const Vec& b) {
    Vec p(a.size() + b.size());
    p << -a, b;
    return p;
}

Vec matching_target(const MarketPrimitives& market) {
    Vec q(market.nx() + market.ny());
    q << -market.n, market.m;
    return q;
}

SupplySystem build_mfe_system(const MarketPrimitives& market) {
    market.validate();
    const int nx = market.nx();
    const int ny = market.ny();
    auto family = std::make_shared<const MatchingFamily>(market.family);

    auto eval = [family, nx, ny](const Vec& p) {
        Vec Q = Vec::Zero(nx + ny);
        for (int x = 0; x < nx; ++x) {
            for (int y = 0; y < ny; ++y) {
                const double mu = family->match(x, y, -p[x], p[nx + y]);
                Q[x] -= mu;
                Q[nx + y] += mu;
            }
        }
        return Q;
    };
    auto coordinate = [family, nx, ny](const Vec& p, int z) {
        double s = 0.0;
        if (z < nx) {
            for (int y = 0; y < ny; ++y) s -= family->match(z, y, -p[z], p[nx + y]);
        } else {
            const int y = z - nx;
            for (int x = 0; x < nx; ++x) s += family->match(x, y, -p[x], p[z]);
        }
        return s;
    };

    SupplySystem system(nx + ny, eval, Bounds::unbounded(nx + ny), 0.0);
    system.set_coordinate_eval(coordinate);
    system.set_name(std::string("matching/") + std::string(to_string(market.family.kind())));

    const FamilyKind kind = market.family.kind();
    if (kind == FamilyKind::TU || kind == FamilyKind::NTU) {
        // log M is affine in each fixed effect, so the coordinate root is closed form.
        const double slope = kind == FamilyKind::TU ? 0.5 : 1.0;
        system.set_coordinate_root([family, nx, ny, slope](const Vec& p, int z, double target) -> std::optional<double> {
            if (z < nx) {
                if (!(target < 0.0)) return kInf;
                Vec terms(ny);
                for (int y = 0; y < ny; ++y) terms[y] = family->log_match(z, y, 0.0, p[nx + y]);
                return (log_sum_exp(terms) - std::log(-target)) / slope;
            }
            if (!(target > 0.0)) return -kInf;
            const int y = z - nx;
            Vec terms(nx);
            for (int x = 0; x < nx; ++x) terms[x] = family->log_match(x, y, -p[x], 0.0);
            return (std::log(target) - log_sum_exp(terms)) / slope;
        });
    }

    SubsolutionHints hints;
    hints.default_anchor = nx;
    // Bounded matching functions (ETU, some ITU) can defeat the envelope;
    // fall back to descending onto the solution from above.
    hints.descend_when_plan_fails = family->kind() == FamilyKind::ETU || family->kind() == FamilyKind::ITU;
    hints.plan_for = [family, nx, ny, coordinate](int anchor) -> std::optional<SubsolutionPlan> {
        if (anchor < nx || anchor >= nx + ny) return std::nullopt;
        SubsolutionPlan plan;
        plan.order.push_back(anchor);
        for (int x = 0; x < nx; ++x) plan.order.push_back(x);
        for (int z = nx; z < nx + ny; ++z) if (z != anchor) plan.order.push_back(z);
        const int y0 = anchor - nx;
        plan.envelope = [family, nx, y0, anchor, coordinate, order = plan.order](const Vec& p, int k) {
            const int z = order[k];
            if (z < nx) return -family->match(z, y0, -p[z], p[anchor]);
            return coordinate(p, z);
        };
        return plan;
    };
    system.set_hints(std::move(hints));
    return system;
}

Normalization default_matching_normalization(const MarketPrimitives& market) {
    auto norm = Normalization::coordinate_of(market.nx());
    norm.label = "b[0]";
    return norm;
}

MatchingEquilibrium solve_mfe(const MarketPrimitives& market, const Normalization& norm, double K,
                              const SolverOptions& opts) {
    const SupplySystem system = build_mfe_system(market);
    const Vec q = matching_target(market);
    const int nx = market.nx();
    // Scaling every mass by c moves b up and a down by log c, so start the pin
    // that far from K; at unit masses this is the plain guess K.
    const double log_scale = std::log((market.n.sum() + market.m.sum()) / (nx + market.ny()));
    const double guess = K + (system.anchor() < nx ? -log_scale : log_scale);
    MatchingEquilibrium eq;
    eq.report = solve_normalized(system, q, norm, K, opts, guess);
    eq.a = -eq.report.p_star.head(nx);
    eq.b = eq.report.p_star.tail(market.ny());
    eq.mu = market.family.match_matrix(eq.a, eq.b);
    eq.K = K;
    return eq;
}

MatchingEquilibrium solve_mfe(const MarketPrimitives& market, double K, const SolverOptions& opts) {
    return solve_mfe(market, default_matching_normalization(market), K, opts);
}

ComparativeStaticsReport comparative_statics_K(const MarketPrimitives& market, const Normalization& norm,
                                               const std::vector<double>& K_grid, const SolverOptions& opts) {
    if (!std::is_sorted(K_grid.begin(), K_grid.end())) {
        throw Error(ErrorCode::InvalidArgument, "K grid must be ascending");
    }
    ComparativeStaticsReport r;
    const double slack = 10.0 * std::max(opts.tol_outer, opts.tol_bracket);
    for (double K : K_grid) {
        const auto eq = solve_mfe(market, norm, K, opts);
        if (!r.a.empty()) {
            const Vec& a_prev = r.a.back();
            const Vec& b_prev = r.b.back();
            for (Eigen::Index x = 0; x < eq.a.size(); ++x) if (eq.a[x] > a_prev[x] + slack) ++r.a_violations;
            for (Eigen::Index y = 0; y < eq.b.size(); ++y) if (eq.b[y] < b_prev[y] - slack) ++r.b_violations;
            r.max_mu_change = std::max(r.max_mu_change, (eq.mu - r.mu.front()).cwiseAbs().maxCoeff());
        }
        r.K.push_back(K);
        r.a.push_back(eq.a);
        r.b.push_back(eq.b);
        r.mu.push_back(eq.mu);
    }
    r.a_nonincreasing = r.a_violations == 0;
    r.b_nondecreasing = r.b_violations == 0;
    return r;
}

Mat recover_transfers(const MatchingFamily& family, const MatchingEquilibrium& eq) {
    if (!family.has_transfers()) {
        throw Error(ErrorCode::FamilyLacksTransfers,
                    std::string(to_string(family.kind())) + " family given by a joint surplus has no transfer split");
    }
    Mat w(family.rows(), family.cols());
    for (int x = 0; x < family.rows(); ++x) {
        for (int y = 0; y < family.cols(); ++y) {
            w(x, y) = eq.b[y] + family.gamma()(x, y) - eq.a[x] - family.alpha()(x, y);
        }
    }
    return w;
}

double transfer_consistency(const MatchingFamily& family, const MatchingEquilibrium& eq) {
    if (!family.has_transfers()) throw Error(ErrorCode::FamilyLacksTransfers, "family has no transfer split");
    double worst = 0.0;
    for (int x = 0; x < family.rows(); ++x) {
        for (int y = 0; y < family.cols(); ++y) {
            const double d = family.distance()(-eq.a[x] - family.alpha()(x, y), -eq.b[y] - family.gamma()(x, y));
            worst = std::max(worst, std::abs(std::log(eq.mu(x, y)) + d));
        }
    }
    return worst;
}

namespace {

void require_positive(const Mat& mu) {
    if (mu.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty match table");
    if (!(mu.array() > 0.0).all() || !mu.allFinite()) {
        throw Error(ErrorCode::NonpositiveMatch, "every match count must be positive and finite");
    }
}

}  // namespace

PreferenceEstimates identify_preferences(const Mat& mu, const Mat& w, const Vec& a, const Vec& b,
                                         const DistanceFunction& d) {
    require_positive(mu);
    if (w.rows() != mu.rows() || w.cols() != mu.cols() || a.size() != mu.rows() || b.size() != mu.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "identification inputs differ in shape");
    }
    PreferenceEstimates out{Mat(mu.rows(), mu.cols()), Mat(mu.rows(), mu.cols())};
    for (Eigen::Index x = 0; x < mu.rows(); ++x) {
        for (Eigen::Index y = 0; y < mu.cols(); ++y) {
            const double lm = std::log(mu(x, y));
            out.alpha(x, y) = lm - a[x] + d(0.0, -w(x, y));
            out.gamma(x, y) = lm - b[y] + d(w(x, y), 0.0);
        }
    }
    return out;
}

CrossDifferenceTable cross_difference(const Mat& table) {
    const int nx = static_cast<int>(table.rows());
    const int ny = static_cast<int>(table.cols());
    if (nx < 2 || ny < 2) throw Error(ErrorCode::InvalidArgument, "cross differences need at least 2 x 2 types");
    CrossDifferenceTable out;
    out.nx = nx;
    out.ny = ny;
    out.values.resize(nx * ny, nx * ny);
    for (int xp = 0; xp < nx; ++xp) {
        for (int yp = 0; yp < ny; ++yp) {
            for (int x = 0; x < nx; ++x) {
                for (int y = 0; y < ny; ++y) {
                    out.values(xp * ny + yp, x * ny + y) =
                        (table(xp, yp) - table(xp, y)) - (table(x, yp) - table(x, y));
                }
            }
        }
    }
    return out;
}

CrossDifferenceEstimates identify_cross_differences(const Mat& mu, const Mat& w, const DistanceFunction& d) {
    require_positive(mu);
    if (w.rows() != mu.rows() || w.cols() != mu.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "transfer table differs in shape from the match table");
    }
    Mat to_alpha(mu.rows(), mu.cols());
    Mat to_gamma(mu.rows(), mu.cols());
    for (Eigen::Index x = 0; x < mu.rows(); ++x) {
        for (Eigen::Index y = 0; y < mu.cols(); ++y) {
            const double lm = std::log(mu(x, y));
            to_alpha(x, y) = lm + d(0.0, -w(x, y));
            to_gamma(x, y) = lm + d(w(x, y), 0.0);
        }
    }
    return CrossDifferenceEstimates{cross_difference(to_alpha), cross_difference(to_gamma)};
}

}  // namespace supplyeq

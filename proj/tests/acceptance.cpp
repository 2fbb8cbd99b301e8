// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Every seed below is fixed before the run; nothing is retried.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "supplyeq/diagnostics.hpp"
#include "supplyeq/discrete_choice.hpp"
#include "supplyeq/estimation.hpp"
#include "supplyeq/matching.hpp"
#include "supplyeq/solver.hpp"

using namespace supplyeq;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

SolverOptions tight() {
    SolverOptions o;
    o.tol_outer = 1e-12;
    o.tol_inner = 1e-15;
    o.tol_bracket = 1e-11;
    o.max_iter_jacobi = 200'000;
    return o;
}

double max_abs(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }
double max_abs(const Mat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// Every matching fixture the criteria sweep over: the grid-oracle markets and
// NTU/ITU draws of the same sizes plus one larger market per family.
std::vector<fixtures::NamedMarket> all_markets() {
    auto out = fixtures::oracle_markets();
    for (auto kind : {FamilyKind::NTU, FamilyKind::ITU})
        for (auto [nx, ny] : {std::pair{2, 2}, std::pair{3, 2}}) out.push_back(fixtures::random_market(kind, 100 * nx + 1, nx, ny));
    for (auto kind : {FamilyKind::TU, FamilyKind::NTU, FamilyKind::ETU, FamilyKind::ITU})
        out.push_back(fixtures::random_market(kind, 31, 3, 4));
    return out;
}

struct DemandFixture {
    std::string name;
    DemandModel model;
    Vec shares;
};

std::vector<DemandFixture> demand_fixtures() {
    Vec s4(4);
    s4 << 0.4, 0.3, 0.2, 0.1;
    Mat chars(4, 1);
    chars << 0.0, 1.0, -1.0, 0.5;
    Vec x(3);
    x << 0.0, 1.0, -1.0;
    Vec d3(3);
    d3 << 0.0, -0.5, -0.4;
    const auto pc = DemandModel::pure_characteristics(x, {100'000, 3});
    Vec tolls(3);
    tolls << 0.0, 0.5, 1.0;
    const auto br = DemandModel::bridge(tolls, {100'000, 11});
    Vec db(3);
    db << -1.0, -0.6, -0.4;
    return {{"logit", DemandModel::logit(4), s4},
            {"rc_logit", DemandModel::rc_logit(chars, Vec::Constant(1, 0.8), {20'000, 5}), s4},
            {"pure_characteristics", pc, (*pc.closed_form())(d3)},
            {"bridge", br, (*br.closed_form())(db)}};
}

// Simulated shares move in steps of 1/R, so the residual cannot go below that.
SolverOptions for_model(SolverOptions o, const DemandModel& model) {
    if (model.simulated()) o.residual_floor = simulated_share_tolerance(model);
    return o;
}

bool nondecreasing_count(const std::vector<Vec>& it, int pin, long& violations) {
    for (std::size_t t = 1; t < it.size(); ++t)
        for (int z = 0; z < it[t].size(); ++z)
            if (z != pin && it[t][z] < it[t - 1][z]) ++violations;
    return violations == 0;
}

// 1. Closed-form agreement with log-odds.
Outcome closed_form_agreement() {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> zd(2, 10);
    SolverOptions o;
    o.tol_outer = 1e-13;
    o.tol_inner = 1e-15;
    o.max_iter_jacobi = 1'000'000;
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const int Z = zd(rng);
        const Vec s = fixtures::random_shares(rng, Z);
        const auto r = invert_demand(DemandModel::logit(Z), s, Normalization::coordinate_of(0), 0.0, o);
        worst = std::max(worst, max_abs(Vec(r.delta - invert_logit(s))));
    }
    return {worst <= 1e-8, "100 share vectors, max |delta - log-odds| = " + num(worst)};
}

// Coarse-to-fine exhaustive grid, each level centred on the previous winner;
// the last level has step 1e-3.
Vec grid_oracle(const SupplySystem& sys, const Vec& q, int pin, double pin_value) {
    Vec centre = Vec::Zero(sys.dim());
    centre[pin] = pin_value;
    const double steps[] = {0.25, 0.025, 0.0025, 0.001};
    double half = 6.0;
    for (double step : steps) {
        GridSpec g;
        for (int z = 0; z < sys.dim(); ++z)
            if (z != pin) g.axes.push_back({centre[z] - half, centre[z] + half, step});
        centre = brute_force_solve(sys, q, pin, pin_value, g);
        half = 2 * step;
    }
    return centre;
}

// 2. Oracle equivalence on the 2x2 and 3x2 TU/ETU fixtures.
Outcome oracle_equivalence() {
    double worst = 0.0;
    int n = 0;
    for (const auto& fm : fixtures::oracle_markets()) {
        const auto sys = build_mfe_system(fm.market);
        const Vec q = matching_target(fm.market);
        const int pin = sys.anchor();
        const auto eq = solve_mfe(fm.market, default_matching_normalization(fm.market), 0.0);
        const Vec p_mfe = matching_prices(eq.a, eq.b);
        const auto pinned = solve_pinned(sys, q, pin, p_mfe[pin]);
        const Vec oracle = grid_oracle(sys, q, pin, p_mfe[pin]);
        worst = std::max({worst, max_abs(Vec(pinned.p_star - oracle)), max_abs(Vec(p_mfe - oracle))});
        ++n;
    }
    return {worst <= 1e-3, std::to_string(n) + " markets, max |p - grid| = " + num(worst)};
}

// 3. Monotone Jacobi iterates from the subsolution.
Outcome monotone_certificate() {
    SolverOptions o;
    o.record_iterates = true;
    long violations = 0;
    int systems = 0, uncertified = 0;
    auto run = [&](const SupplySystem& sys, const Vec& q, double pin_value, const SolverOptions& so) {
        const auto r = solve_pinned(sys, q, sys.anchor(), pin_value, so);
        nondecreasing_count(r.iterates, sys.anchor(), violations);
        if (!r.monotone_certificate) ++uncertified;
        ++systems;
    };
    for (const auto& fm : all_markets()) {
        // Pin where the normalized equilibrium puts the anchor, so the pinned problem is feasible.
        const auto eq = solve_mfe(fm.market, Normalization::mean(), 0.0);
        const auto sys = build_mfe_system(fm.market);
        run(sys, matching_target(fm.market), matching_prices(eq.a, eq.b)[sys.anchor()], o);
    }
    for (const auto& d : demand_fixtures()) {
        const auto sys = build_demand_system(d.model);
        const double pin = d.model.family() == DemandFamily::Bridge ? -1.0 : 0.0;
        run(sys, d.shares, pin, for_model(o, d.model));
    }
    return {violations == 0 && uncertified == 0, std::to_string(systems) + " systems, " + std::to_string(violations) +
                                                     " violations, " + std::to_string(uncertified) + " uncertified"};
}

// 4. Dichotomy halving and final normalization gap.
Outcome dichotomy_convergence() {
    SolverOptions o;
    int solves = 0, bad_width = 0;
    double worst_gap = 0.0;
    auto run = [&](const SupplySystem& sys, const Vec& q, const Normalization& norm, double K, const SolverOptions& so) {
        const auto r = solve_normalized(sys, q, norm, K, so);
        ++solves;
        if (r.bracket_history.size() < 2) {
            ++bad_width;
            return;
        }
        const double w0 = r.bracket_history.front().second - r.bracket_history.front().first;
        for (std::size_t k = 0; k < r.bracket_history.size(); ++k) {
            const auto [lo, hi] = r.bracket_history[k];
            if (hi - lo != std::ldexp(w0, -static_cast<int>(k))) ++bad_width;
        }
        worst_gap = std::max(worst_gap, std::abs(norm(r.p_star) - K));
    };
    for (const auto& fm : all_markets())
        for (double K : {-0.7, -0.5, 0.5, 0.7}) run(build_mfe_system(fm.market), matching_target(fm.market), Normalization::mean(), K, o);
    for (const auto& d : demand_fixtures()) {
        if (d.model.family() == DemandFamily::Bridge) {
            run(build_demand_system(d.model), d.shares, Normalization::max(), -0.3, for_model(o, d.model));
        } else {
            run(build_demand_system(d.model), d.shares, Normalization::mean(), 0.4, for_model(o, d.model));
        }
    }
    return {bad_width == 0 && worst_gap <= o.tol_bracket,
            std::to_string(solves) + " solves, " + std::to_string(bad_width) + " inexact halvings, max |psi - K| = " +
                num(worst_gap)};
}

// 5. Uniqueness under normalization from two starting pins.
Outcome uniqueness() {
    // psi is resolved to tol_bracket, which moves prices by a multiple of it;
    // hold it to the same level as the residual.
    SolverOptions o;
    o.tol_outer = 1e-10;
    o.tol_bracket = 1e-10;
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> dim(2, 4);
    const FamilyKind kinds[] = {FamilyKind::TU, FamilyKind::NTU, FamilyKind::ETU, FamilyKind::ITU};
    double worst = 0.0;
    int instances = 0;
    for (int i = 0; i < 25; ++i, ++instances) {
        const auto fm = fixtures::random_market(kinds[i % 4], 1000 + i, dim(rng), dim(rng));
        const auto sys = build_mfe_system(fm.market);
        const Vec q = matching_target(fm.market);
        const auto r1 = solve_normalized(sys, q, Normalization::mean(), 0.0, o, -3.0);
        const auto r2 = solve_normalized(sys, q, Normalization::mean(), 0.0, o, 5.0);
        worst = std::max(worst, max_abs(Vec(r1.p_star - r2.p_star)));
    }
    // Demand instances use the closed form: simulated shares are step functions
    // whose solution sets have width 1/R, so agreement at 1e-9 is not defined there.
    std::uniform_int_distribution<int> zd(3, 8);
    for (int i = 0; i < 25; ++i, ++instances) {
        const int Z = zd(rng);
        const Vec s = fixtures::random_shares(rng, Z, 0.02);
        const auto sys = build_demand_system(DemandModel::logit(Z));
        const auto r1 = solve_normalized(sys, s, Normalization::mean(), 0.0, o, -4.0);
        const auto r2 = solve_normalized(sys, s, Normalization::mean(), 0.0, o, 6.0);
        worst = std::max(worst, max_abs(Vec(r1.p_star - r2.p_star)));
    }
    return {worst <= 10 * o.tol_outer, std::to_string(instances) + " instances, max |p1 - p2| = " + num(worst)};
}

// 6. Comparative statics in K.
Outcome comparative_statics() {
    const std::vector<double> K{-1.0, -0.5, 0.0, 0.5, 1.0};
    int violations = 0, markets = 0;
    double tu_change = 0.0;
    for (auto kind : {FamilyKind::TU, FamilyKind::NTU, FamilyKind::ETU}) {
        for (auto [nx, ny, seed] : {std::tuple{2, 2, 41}, std::tuple{3, 2, 42}, std::tuple{3, 3, 43}, std::tuple{3, 4, 44}}) {
            const auto fm = fixtures::random_market(kind, seed, nx, ny);
            const auto cs = comparative_statics_K(fm.market, Normalization::mean(), K);
            violations += cs.a_violations + cs.b_violations;
            if (kind == FamilyKind::TU) tu_change = std::max(tu_change, cs.max_mu_change);
            ++markets;
        }
    }
    return {violations == 0 && tu_change <= 1e-8,
            std::to_string(markets) + " markets, " + std::to_string(violations) + " violations, TU max |dmu| = " +
                num(tu_change)};
}

// 7. Accounting and balance.
Outcome accounting_balance() {
    SolverOptions o;
    double worst_margin = 0.0;
    bool balance = true;
    int systems = 0;
    SamplingOptions so;
    so.samples = 1000;
    for (const auto& fm : all_markets()) {
        const auto eq = solve_mfe(fm.market, Normalization::mean(), 0.0, o);
        worst_margin = std::max({worst_margin, max_abs(Vec(eq.mu.rowwise().sum() - fm.market.n)),
                                 max_abs(Vec(eq.mu.colwise().sum().transpose() - fm.market.m))});
        balance = balance && check_balance(build_mfe_system(fm.market), so).passed;
        ++systems;
    }
    for (const auto& d : demand_fixtures()) {
        balance = balance && check_balance(build_demand_system(d.model), so).passed;
        ++systems;
    }
    return {worst_margin <= 10 * o.tol_outer && balance,
            std::to_string(systems) + " systems, max margin error = " + num(worst_margin) +
                (balance ? ", balance holds" : ", balance violated")};
}

// 8. Cross-difference identification round trip.
Outcome identification() {
    double worst = 0.0;
    int markets = 0;
    for (auto kind : {FamilyKind::TU, FamilyKind::ETU}) {
        for (auto [nx, ny, seed] : {std::tuple{2, 2, 81}, std::tuple{3, 3, 82}, std::tuple{3, 4, 83}}) {
            std::mt19937_64 rng(seed);
            const Mat alpha = fixtures::random_mat(rng, nx, ny, 0.5), gamma = fixtures::random_mat(rng, nx, ny, 0.5);
            auto [n, m] = fixtures::random_masses(rng, nx, ny);
            const auto fam = kind == FamilyKind::TU ? MatchingFamily::tu_split(alpha, gamma) : MatchingFamily::etu(alpha, gamma);
            const auto mk = make_market(n, m, fam);
            const auto eq = solve_mfe(mk, Normalization::mean(), 0.0, tight());
            const auto est = identify_cross_differences(eq.mu, recover_transfers(mk.family, eq), mk.family.distance());
            worst = std::max({worst, max_abs(Mat(est.alpha.values - cross_difference(alpha).values)),
                              max_abs(Mat(est.gamma.values - cross_difference(gamma).values))});
            ++markets;
        }
    }
    return {worst <= 1e-6, std::to_string(markets) + " markets, max cross-difference error = " + num(worst)};
}

ThetaSpec two_param_spec(FamilyKind kind, int dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ThetaSpec s;
    s.kind = kind;
    s.alpha0 = fixtures::random_mat(rng, dim, dim, 0.3);
    s.gamma0 = fixtures::random_mat(rng, dim, dim, 0.3);
    for (int k = 0; k < 2; ++k) {
        s.alpha_basis.push_back(fixtures::random_mat(rng, dim, dim, 1.0));
        s.gamma_basis.push_back(fixtures::random_mat(rng, dim, dim, 1.0));
    }
    return s;
}

// 9. Analytic likelihood gradient against central differences.
Outcome gradient_check() {
    double worst = 0.0;
    int points = 0, fallbacks = 0;
    const auto norm = Normalization::mean();
    for (auto [kind, dim, seed] : {std::tuple{FamilyKind::TU, 2, 91}, std::tuple{FamilyKind::ETU, 2, 92},
                                   std::tuple{FamilyKind::TU, 3, 93}, std::tuple{FamilyKind::ETU, 3, 94}}) {
        const auto spec = two_param_spec(kind, dim, seed);
        std::mt19937_64 rng(seed + 1);
        std::uniform_real_distribution<double> u(1.0, 3.0);
        Mat mu_hat(dim, dim);
        for (int i = 0; i < dim * dim; ++i) mu_hat(i) = u(rng);
        const MatchSample s{mu_hat};
        std::normal_distribution<double> nd(0.0, 0.5);
        for (int rep = 0; rep < 10; ++rep, ++points) {
            Vec th(2);
            th << nd(rng), nd(rng);
            const auto pf = predicted_frequencies(spec, th, s.n_hat(), s.m_hat(), norm, 0.0, tight());
            const auto g = likelihood_gradient(s, spec, th, pf.equilibrium, norm, 0.0, tight());
            if (g.finite_difference_fallback) ++fallbacks;
            for (int k = 0; k < 2; ++k) {
                const double h = 1e-5;
                Vec tp = th, tm = th;
                tp[k] += h;
                tm[k] -= h;
                const double fd = (log_likelihood(s, spec, tp, norm, 0.0, tight()) -
                                   log_likelihood(s, spec, tm, norm, 0.0, tight())) /
                                  (2 * h);
                worst = std::max(worst, std::abs(g.gradient[k] - fd) / std::max(1.0, std::abs(fd)));
            }
        }
    }
    return {worst <= 1e-4 && fallbacks == 0, std::to_string(points) + " points, max relative error = " + num(worst) +
                                                 ", " + std::to_string(fallbacks) + " fallbacks"};
}

Mat expected_counts(const ThetaSpec& spec, const Vec& theta, const Vec& n, const Vec& m, double N) {
    return N * predicted_frequencies(spec, theta, n, m, Normalization::mean(), 0.0, tight()).pi;
}

// 10. The nested optimum embedded in the MPEC first-order system.
Outcome kkt_embedding() {
    double worst_psi = 0.0, worst_jac = 0.0;
    int cases = 0;
    OptimizerOptions oo;
    oo.gradient_tol = 1e-9;
    for (auto [kind, dim, seed] : {std::tuple{FamilyKind::TU, 2, 101}, std::tuple{FamilyKind::ETU, 3, 102}}) {
        const auto spec = two_param_spec(kind, dim, seed);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(1.0, 3.0);
        Mat mu_hat(dim, dim);
        for (int i = 0; i < dim * dim; ++i) mu_hat(i) = u(rng);
        const MatchSample s{mu_hat};
        const auto norm = Normalization::mean();
        const auto r = mle_nested(s, spec, norm, 0.0, Vec::Zero(2), tight(), oo);
        const MpecPoint pt{r.theta, r.a, r.b, mpec_multipliers(r.theta, r.a, r.b, s, spec, norm, 0.0)};
        const auto base = mpec_residual(pt, s, spec, norm, 0.0);
        worst_psi = std::max(worst_psi, base.psi.norm());
        const int d = 2, nz = d + 2 * dim + (2 * dim + 1);
        Vec z(nz);
        z << pt.theta, pt.a, pt.b, pt.lambda;
        auto unpack = [&](const Vec& v) {
            return MpecPoint{v.head(d), v.segment(d, dim), v.segment(d + dim, dim), v.tail(2 * dim + 1)};
        };
        Mat fd(base.psi.size(), nz);
        for (int j = 0; j < nz; ++j) {
            Vec zp = z, zm = z;
            zp[j] += 1e-6;
            zm[j] -= 1e-6;
            fd.col(j) = (mpec_residual(unpack(zp), s, spec, norm, 0.0).psi - mpec_residual(unpack(zm), s, spec, norm, 0.0).psi) /
                        2e-6;
        }
        worst_jac = std::max(worst_jac, max_abs(Mat(fd - base.jacobian)) / std::max(1.0, max_abs(fd)));
        ++cases;
    }
    return {worst_psi <= 1e-6 && worst_jac <= 1e-4, std::to_string(cases) + " optima, max |Psi| = " + num(worst_psi) +
                                                        ", Jacobian relative error = " + num(worst_jac)};
}

// Multinomial counts over the cells of pi, drawn as sequential binomials.
Mat multinomial(std::mt19937_64& rng, const Mat& pi, long N) {
    Mat counts = Mat::Zero(pi.rows(), pi.cols());
    long left = N;
    double mass = 1.0;
    for (int i = 0; i < pi.size() && left > 0; ++i) {
        const double p = i + 1 == pi.size() ? 1.0 : std::clamp(pi(i) / mass, 0.0, 1.0);
        std::binomial_distribution<long> b(left, p);
        const long c = b(rng);
        counts(i) = static_cast<double>(c);
        left -= c;
        mass -= pi(i);
    }
    return counts;
}

struct LogitDesign {
    GmmDataset data;
    Vec xi;
};

LogitDesign logit_design(std::mt19937_64& rng, int Z, double theta0, double noise) {
    std::normal_distribution<double> nd;
    LogitDesign out{{Vec(Z), Vec(Z), Vec(Z), Vec(Z)}, Vec::Zero(Z)};
    auto& d = out.data;
    Vec delta(Z);
    for (int z = 0; z < Z; ++z) {
        const bool outside = z == 0;
        out.xi[z] = outside ? 0.0 : noise * nd(rng);
        d.x1[z] = outside ? 0.0 : nd(rng);
        d.y[z] = outside ? 0.0 : nd(rng);
        d.x2[z] = outside ? 0.0 : 0.5 * d.y[z] + 0.2 * nd(rng) + 0.5 * out.xi[z];
        delta[z] = d.x1[z] + out.xi[z] - theta0 * d.x2[z];
    }
    d.s = demand_logit(delta);
    return out;
}

// 11. Estimator self-consistency, noiseless and noisy.
Outcome estimator_consistency_stages(std::string& stage) {
    const auto start = std::chrono::steady_clock::now();
    std::ostringstream detail;
    bool pass = true;
    OptimizerOptions oo;
    oo.gradient_tol = 1e-9;

    // Noiseless MLE on expected counts.
    const auto spec = two_param_spec(FamilyKind::ETU, 3, 111);
    Vec theta0(2);
    theta0 << 0.4, -0.3;
    std::mt19937_64 rng(111);
    auto [n, m] = fixtures::random_masses(rng, 3, 3);
    const Mat expected = expected_counts(spec, theta0, n, m, 1000.0);
    const auto mle = mle_nested(MatchSample{expected}, spec, Normalization::mean(), 0.0, Vec::Zero(2), tight(), oo);
    const double mle_err = max_abs(Vec(mle.theta - theta0));
    pass = pass && mle_err <= 1e-6;
    detail << "MLE noiseless |dtheta| = " << num(mle_err);

    stage = "GMM moments";
    // GMM moments at theta0 on xi = 0 data; bound is the delta tolerance times the instrument mass.
    const int Z = 50;
    const double theta_g = 1.5;
    std::mt19937_64 grng(112);
    const auto clean = logit_design(grng, Z, theta_g, 0.0);
    SolverOptions inv;
    inv.tol_outer = 1e-13;
    inv.tol_inner = 1e-15;
    inv.max_iter_jacobi = 1'000'000;
    const auto delta = invert_demand(DemandModel::logit(Z), clean.data.s, Normalization::coordinate_of(0), 0.0, inv).delta;
    const Vec mom = gmm_moments(clean.data, delta, linear_price_g(), Vec::Constant(1, theta_g));
    const double delta_tol = 1e-8;
    const bool mom_ok = std::abs(mom[0]) <= delta_tol * clean.data.x1.cwiseAbs().sum() &&
                        std::abs(mom[1]) <= delta_tol * clean.data.y.cwiseAbs().sum();
    pass = pass && mom_ok;
    detail << "; GMM moments at theta0 = " << num(max_abs(mom));

    stage = "noisy MLE";
    // Noisy MLE: N = 1e6 multinomial matches. Bound: 5 sd from the Fisher information at theta0.
    const long N = 1'000'000;
    const auto pf = predicted_frequencies(spec, theta0, n, m, Normalization::mean(), 0.0, tight());
    const auto g0 = likelihood_gradient(MatchSample{expected}, spec, theta0, pf.equilibrium, Normalization::mean(), 0.0,
                                        tight());
    Mat info = Mat::Zero(2, 2);
    for (int c = 0; c < pf.pi.size(); ++c) {
        const Vec dp = g0.dpi.row(c).transpose();
        info += dp * dp.transpose() / pf.pi(c / pf.pi.cols(), c % pf.pi.cols());
    }
    const Vec sd_mle = (info.inverse().diagonal() / static_cast<double>(N)).cwiseSqrt();
    const Mat noisy = multinomial(rng, pf.pi, N);
    const auto mle_noisy = mle_nested(MatchSample{noisy}, spec, Normalization::mean(), 0.0, Vec::Zero(2), tight(), oo);
    const Vec z_mle = ((mle_noisy.theta - theta0).array() / sd_mle.array()).matrix();
    pass = pass && max_abs(z_mle) <= 5.0;
    detail << "; noisy MLE |dtheta|/sd = " << num(max_abs(z_mle));

    stage = "noisy GMM";
    // Noisy GMM: 50 goods, xi ~ N(0, 0.1^2). Bound: the pinned 0.05; the linearized IV sd is reported.
    const double sigma = 0.1;
    const auto noisy_g = logit_design(grng, Z, theta_g, sigma);
    Mat instr(Z, 2);
    instr << noisy_g.data.x1, noisy_g.data.y;
    const Mat W = (instr.transpose() * instr).inverse();
    const Vec G = instr.transpose() * noisy_g.data.x2;
    const double gwg = G.dot(W * G);
    const double sd_gmm = sigma * std::sqrt(G.dot(W * instr.transpose() * instr * W * G)) / gwg;
    GmmOptions go;
    go.solver = inv;
    const auto gmm = gmm_nested(noisy_g.data, DemandModel::logit(Z), linear_price_g(), W, Vec::Zero(1), go);
    const double err_gmm = std::abs(gmm.theta[0] - theta_g);
    pass = pass && gmm.converged && err_gmm <= 0.05;
    detail << "; noisy GMM |dtheta| = " << num(err_gmm) << " (sd " << num(sd_gmm) << ")";

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    pass = pass && secs <= 300.0;
    detail << "; " << num(secs) << " s";
    return {pass, detail.str()};
}

Outcome estimator_consistency() {
    std::string stage = "noiseless MLE";
    try {
        return estimator_consistency_stages(stage);
    } catch (const std::exception& e) {
        return {false, stage + " threw: " + e.what()};
    }
}

// 12. Simulated logit against the closed form.
Outcome monte_carlo_demand() {
    const int Z = 5;
    const long R = 1'000'000;
    const auto model = DemandModel::logit_mc(Z, {R, 12});
    std::mt19937_64 rng(12);
    std::normal_distribution<double> nd;
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        Vec delta(Z);
        for (int z = 0; z < Z; ++z) delta[z] = nd(rng);
        const Vec mc = demand_mc(model, delta), exact = demand_logit(delta);
        for (int z = 0; z < Z; ++z) {
            const double se = std::sqrt(exact[z] * (1 - exact[z]) / static_cast<double>(R));
            worst = std::max(worst, std::abs(mc[z] - exact[z]) / se);
        }
    }
    return {worst <= 3.0, "20 delta x 5 goods, max |mc - logit| / SE = " + num(worst)};
}

std::string failed_properties(const SupplySystem& sys, const Vec& q) {
    SamplingOptions so;
    std::string out;
    if (!check_weak_substitutes(sys, 1e-4, so).passed) out += " weak";
    if (!check_pivotal_substitutes_all(sys, q, so).passed) out += " pivotal";
    if (!check_responsiveness_all(sys, q, so).passed) out += " responsiveness";
    if (!check_connected_strict_substitutes(sys, so).passed) out += " connected";
    if (!check_balance(sys, so).passed) out += " balance";
    return out;
}

// 13. Planted counterexamples are caught, and families whose regularity holds
// analytically are not flagged. ETU, ITU with a bounded distance, pure
// characteristics and the bridge model violate some properties outright; their
// flags are reported but do not count either way.
Outcome diagnostics_sensitivity() {
    std::vector<std::string> missed, flagged, known;
    for (const auto& p : {planted_nonmonotone(), planted_disconnected(), planted_bounded(), planted_constant()}) {
        PropertyReport r;
        if (p.broken_property == "weak_substitutes") r = check_weak_substitutes(p.system, 1e-4);
        else if (p.broken_property == "connected_strict_substitutes") r = check_connected_strict_substitutes(p.system);
        else if (p.broken_property == "responsiveness") r = check_responsiveness_all(p.system, p.q);
        else r = check_pivotal_substitutes_all(p.system, p.q);
        if (r.passed) missed.push_back(p.name);
    }

    std::vector<fixtures::NamedMarket> regular_markets, known_markets;
    for (auto kind : {FamilyKind::TU, FamilyKind::NTU}) regular_markets.push_back(fixtures::random_market(kind, 131, 2, 3));
    {
        std::mt19937_64 rng(131);
        auto [n, m] = fixtures::random_masses(rng, 2, 3);
        const Mat a = fixtures::random_mat(rng, 2, 3, 0.5), g = fixtures::random_mat(rng, 2, 3, 0.5);
        regular_markets.push_back(
            {"ITU-transferable-2x3-s131", make_market(n, m, MatchingFamily::itu(a, g, DistanceFunction::transferable()))});
    }
    for (auto kind : {FamilyKind::ETU, FamilyKind::ITU}) known_markets.push_back(fixtures::random_market(kind, 131, 2, 3));

    Vec s4(4);
    s4 << 0.4, 0.3, 0.2, 0.1;
    Mat chars(4, 1);
    chars << 0.0, 1.0, -1.0, 0.5;
    const std::vector<DemandFixture> regular_demand{
        {"logit", DemandModel::logit(4), s4},
        {"logit_mc", DemandModel::logit_mc(4, {200'000, 5}), s4},
        {"rc_logit", DemandModel::rc_logit(chars, Vec::Constant(1, 0.8), {200'000, 5}), s4}};
    std::vector<DemandFixture> known_demand;
    for (const auto& d : demand_fixtures())
        if (d.name == "pure_characteristics" || d.name == "bridge") known_demand.push_back(d);

    int regular = 0;
    for (const auto& fm : regular_markets) {
        const auto f = failed_properties(build_mfe_system(fm.market), matching_target(fm.market));
        if (!f.empty()) flagged.push_back(fm.name + ":" + f);
        ++regular;
    }
    for (const auto& d : regular_demand) {
        auto f = failed_properties(build_demand_system(d.model), d.shares);
        if (!check_utility_regularity(d.model).passed) f += " utility";
        if (!f.empty()) flagged.push_back(d.name + ":" + f);
        ++regular;
    }
    for (const auto& fm : known_markets)
        known.push_back(fm.name + ":" + failed_properties(build_mfe_system(fm.market), matching_target(fm.market)));
    UtilityProbeGrid negative;
    negative.delta = {-3.0, -1.5, -0.5, -0.1};
    for (const auto& d : known_demand) {
        auto f = failed_properties(build_demand_system(d.model), d.shares);
        if (!check_utility_regularity(d.model, d.name == "bridge" ? negative : UtilityProbeGrid{}).passed) f += " utility";
        known.push_back(d.name + ":" + f);
    }

    std::string detail = "4 planted, " + std::to_string(missed.size()) + " missed; " + std::to_string(regular) +
                         " regular, " + std::to_string(flagged.size()) + " flagged";
    for (const auto& s : missed) detail += " [missed " + s + "]";
    for (const auto& s : flagged) detail += " [flagged " + s + "]";
    for (const auto& s : known) detail += " [known " + s + "]";
    return {missed.empty() && flagged.empty(), detail};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"closed-form agreement", closed_form_agreement},
        {"oracle equivalence", oracle_equivalence},
        {"monotone Jacobi certificate", monotone_certificate},
        {"dichotomy convergence", dichotomy_convergence},
        {"uniqueness under normalization", uniqueness},
        {"comparative statics", comparative_statics},
        {"accounting and balance", accounting_balance},
        {"identification round trip", identification},
        {"gradient check", gradient_check},
        {"KKT embedding", kkt_embedding},
        {"estimator self-consistency", estimator_consistency},
        {"Monte Carlo demand", monte_carlo_demand},
        {"diagnostics sensitivity", diagnostics_sensitivity},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failed;
        std::printf("%s criterion %zu: %s (%s) [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}

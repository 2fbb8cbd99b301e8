#include <doctest.h>

#include "fixtures.hpp"

using namespace supplyeq;

TEST_CASE("logit demand passes every structural probe") {
    const auto sys = build_demand_system(DemandModel::logit(4));
    Vec q(4);
    q << 0.4, 0.3, 0.2, 0.1;
    CHECK(check_weak_substitutes(sys, 1e-3).passed);
    CHECK(check_pivotal_substitutes_all(sys, q).passed);
    CHECK(check_responsiveness_all(sys, q).passed);
    CHECK(check_connected_strict_substitutes(sys).passed);
    CHECK(check_balance(sys).passed);
}

TEST_CASE("planted systems fail the property they break") {
    for (const auto& p : {planted_nonmonotone(), planted_disconnected(), planted_bounded(), planted_constant()}) {
        CAPTURE(p.name);
        PropertyReport r;
        if (p.broken_property == "weak_substitutes") r = check_weak_substitutes(p.system, 1e-3);
        else if (p.broken_property == "connected_strict_substitutes") r = check_connected_strict_substitutes(p.system);
        else if (p.broken_property == "responsiveness") r = check_responsiveness_all(p.system, p.q);
        else r = check_pivotal_substitutes_all(p.system, p.q);
        CHECK_FALSE(r.passed);
        CHECK(r.violation_count > 0);
        CHECK(check_balance(p.system).passed);
    }
}

TEST_CASE("disconnected blocks are pivotal failures too") {
    const auto p = planted_disconnected();
    CHECK_FALSE(check_pivotal_substitutes(p.system, p.q, {0, 1}).passed);
    CHECK(check_weak_substitutes(p.system, 1e-3).passed);
}

TEST_CASE("balance probe catches a leaking system") {
    SupplySystem leak(2, [](const Vec& p) { return Vec(demand_logit(p) * 1.01); }, Bounds::unbounded(2), 1.0);
    const auto r = check_balance(leak);
    CHECK_FALSE(r.passed);
    CHECK(r.violations.size() <= SamplingOptions{}.max_recorded);
}

TEST_CASE("probes are deterministic for a seed") {
    const auto p = planted_nonmonotone();
    const auto a = check_weak_substitutes(p.system, 1e-3), b = check_weak_substitutes(p.system, 1e-3);
    REQUIRE(a.violation_count == b.violation_count);
    for (std::size_t i = 0; i < a.violations.size(); ++i) CHECK(a.violations[i].p == b.violations[i].p);
    const auto pts = sample_points(p.system, SamplingOptions{}, 5);
    CHECK(pts.size() == 5);
    for (const auto& x : pts) CHECK((x.array() >= -5.0).all());
}

TEST_CASE("grid oracle agrees with the pinned solve") {
    const auto fm = fixtures::random_market(FamilyKind::TU, 7, 2, 2);
    const auto sys = build_mfe_system(fm.market);
    const Vec q = matching_target(fm.market);
    const int pin = sys.anchor();
    const auto r = solve_pinned(sys, q, pin, 0.0);
    // Coarse-to-fine grids, each centered on the previous grid's winner.
    GridSpec g;
    Vec centre = Vec::Zero(4);
    double half = 4.0, step = 0.05;
    for (int level = 0; level < 3; ++level) {
        g.axes.clear();
        for (int z = 0; z < 4; ++z)
            if (z != pin) g.axes.push_back({centre[z] - half, centre[z] + half, step});
        centre = brute_force_solve(sys, q, pin, 0.0, g);
        half = 2 * step;
        step /= 10;
    }
    CHECK((centre - r.p_star).cwiseAbs().maxCoeff() <= 1e-3);
    g.max_points = 10;
    CHECK_THROWS_AS(brute_force_solve(sys, q, pin, 0.0, g), Error);
}

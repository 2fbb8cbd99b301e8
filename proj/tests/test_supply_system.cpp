#include <doctest.h>

#include <cmath>

#include "supplyeq/discrete_choice.hpp"
#include "supplyeq/supply_system.hpp"

using namespace supplyeq;

TEST_CASE("bounds are open boxes") {
    Bounds b{Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)};
    CHECK(b.contains(Vec::Zero(2)));
    CHECK_FALSE(b.contains(Vec::Constant(2, 1.0)));
    CHECK(b.clamp_inside(0, 5.0, 1e-3) == doctest::Approx(0.998));  // margin scales with 1 + |endpoint|
    Bounds bad{Vec::Constant(1, 1.0), Vec::Constant(1, 1.0)};
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK(Bounds::unbounded(3).contains(Vec::Constant(3, 1e300)));
}

TEST_CASE("checked evaluation rejects points outside the box and non-finite output") {
    SupplySystem s(2, [](const Vec& p) { return Vec(p.array().exp().matrix()); },
                   Bounds{Vec::Constant(2, -10.0), Vec::Constant(2, 10.0)}, 0.0);
    try {
        eval_supply(s, Vec::Constant(2, 20.0));
        FAIL("expected OutOfBounds");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::OutOfBounds);
    }
    SupplySystem inf(1, [](const Vec&) { return Vec::Constant(1, kInf); }, Bounds::unbounded(1), 0.0);
    try {
        eval_supply(inf, Vec::Zero(1));
        FAIL("expected NonFinite");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonFinite);
    }
}

TEST_CASE("coordinate evaluation defaults to the full map") {
    SupplySystem s(3, [](const Vec& p) { return Vec(2.0 * p); }, Bounds::unbounded(3), 0.0);
    Vec p(3);
    p << 1, 2, 3;
    CHECK(s.coordinate(p, 2) == 6.0);
    s.set_coordinate_eval([](const Vec& p, int z) { return 3.0 * p[z]; });
    CHECK(s.coordinate(p, 2) == 9.0);
}

TEST_CASE("normalizations shift with the diagonal") {
    Vec p(4);
    p << 0.3, -1.2, 2.5, 0.0;
    std::vector<Normalization> norms{Normalization::coordinate_of(2), Normalization::mean(), Normalization::max(),
                                     Normalization::min(),
                                     renormalize([](const Vec& v) { return std::log(v.array().exp().sum()); }, "lse")};
    for (const auto& n : norms) {
        for (double t : {-3.0, 0.5, 7.25}) {
            CHECK(n(p.array() + t) == doctest::Approx(n(p) + t).epsilon(1e-10));
        }
    }
    CHECK(Normalization::mean()(p) == doctest::Approx(0.4));
    CHECK(Normalization::max()(p) == 2.5);
    CHECK(Normalization::min()(p) == -1.2);
    // log-sum-exp renormalized: psi(p) = log sum e^p at raw = 0.
    CHECK(norms[4](p) == doctest::Approx(std::log(p.array().exp().sum())).epsilon(1e-9));
}

TEST_CASE("normalization gradients sum to one") {
    Vec p(3);
    p << 0.1, 0.7, -0.4;
    for (const auto& n : {Normalization::coordinate_of(1), Normalization::mean(), Normalization::max(),
                          Normalization::min()}) {
        CHECK(n.gradient(p).sum() == doctest::Approx(1.0));
    }
    const auto lse = renormalize([](const Vec& v) { return std::log(v.array().exp().sum()); });
    const Vec g = lse.gradient(p);
    CHECK(g.sum() == doctest::Approx(1.0).epsilon(1e-6));
    const Vec soft = demand_logit(p);
    CHECK((g - soft).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("sup norm") {
    Vec v(3);
    v << 1, -4, 2;
    CHECK(sup_norm(v) == 4.0);
}

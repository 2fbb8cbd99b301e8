#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"

using namespace supplyeq;

TEST_CASE("distance functions commute with the diagonal") {
    const std::vector<DistanceFunction> ds{DistanceFunction::transferable(), DistanceFunction::exponential(),
                                           DistanceFunction::log_transfer_fixture(1.0, 3.0)};
    for (const auto& d : ds) {
        for (double t : {-2.0, 0.3, 5.0}) {
            CHECK(d(0.4 + t, -1.1 + t) == doctest::Approx(d(0.4, -1.1) + t).epsilon(1e-12));
        }
    }
    CHECK(DistanceFunction::exponential()(0.0, 0.0) == doctest::Approx(0.0));
    CHECK(DistanceFunction::log_transfer_fixture(1.0, 3.0)(1.0, 2.0) == doctest::Approx((3.0 * 1.0 + 2.0) / 4.0));
}

TEST_CASE("numeric frontier matches the closed-form log-transfer distance") {
    const double cx = 1.0, cy = 2.0;
    const auto numeric = DistanceFunction::from_transfer_utilities([=](double w) { return cx * std::log(w); },
                                                                   [=](double w) { return -cy * std::log(w); });
    const auto exact = DistanceFunction::log_transfer_fixture(cx, cy);
    for (double u : {-1.0, 0.0, 2.0})
        for (double v : {-0.5, 1.5}) CHECK(numeric(u, v) == doctest::Approx(exact(u, v)).epsilon(1e-8));
    const auto e = numeric.expansion(0.3, -0.2);
    CHECK(e.du + e.dv == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("ITU with the numeric log-transfer frontier behaves like its linear closed form") {
    // d is linear, so log M = -(cy u + cx v)/(cx + cy) and the market is TU-like.
    std::mt19937_64 rng(71);
    const Mat alpha = fixtures::random_mat(rng, 2, 2, 0.5), gamma = fixtures::random_mat(rng, 2, 2, 0.5);
    const auto mk = make_market(Vec::Ones(2), Vec::Ones(2),
                                MatchingFamily::itu(alpha, gamma, DistanceFunction::log_transfer_fixture(1.0, 2.0)));
    const auto eq = solve_mfe(mk, 0.0);
    const Mat l = eq.mu.array().log().matrix();
    // Linear d: log mu is additive in x and y up to (2 alpha + gamma) / 3.
    const Mat s = (2.0 * alpha + gamma) / 3.0;
    CHECK((l(0, 0) + l(1, 1) - l(0, 1) - l(1, 0)) ==
          doctest::Approx(s(0, 0) + s(1, 1) - s(0, 1) - s(1, 0)).epsilon(1e-7));
    CHECK(transfer_consistency(mk.family, eq) < 1e-7);
}

TEST_CASE("TU 2x2 with diagonal surplus 2 log 2") {
    Mat phi(2, 2);
    phi << 2 * std::log(2.0), 0, 0, 2 * std::log(2.0);
    const auto mk = make_market(Vec::Ones(2), Vec::Ones(2), MatchingFamily::tu(phi));
    SolverOptions o;
    o.tol_outer = 1e-12;
    o.tol_inner = 1e-15;
    const auto eq = solve_mfe(mk, 0.0, o);
    // mu11 mu22 / (mu12 mu21) = e^{phi11 + phi22 - phi12 - phi21} / ... = 4 with unit margins.
    Mat expect(2, 2);
    expect << 2.0 / 3, 1.0 / 3, 1.0 / 3, 2.0 / 3;
    CHECK((eq.mu - expect).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(eq.b[0] == 0.0);
}

TEST_CASE("symmetric ETU 2x2 splits evenly") {
    const auto mk = make_market(Vec::Ones(2), Vec::Ones(2), MatchingFamily::etu(Mat::Zero(2, 2), Mat::Zero(2, 2)));
    SolverOptions o;
    o.tol_outer = 1e-12;
    o.tol_inner = 1e-15;
    const auto eq = solve_mfe(mk, 0.0, o);
    CHECK((eq.mu.array() - 0.5).abs().maxCoeff() < 1e-10);
    // b0 = 0 forces 1 / (e^{-a}/2 + 1/2) = 1/2, so a = -log 3 and b1 = 0.
    CHECK(eq.a[0] == doctest::Approx(-std::log(3.0)).epsilon(1e-9));
    CHECK(eq.a[1] == doctest::Approx(-std::log(3.0)).epsilon(1e-9));
    CHECK(std::abs(eq.b[1]) < 1e-9);
}

TEST_CASE("market primitives are validated") {
    try {
        make_market(Vec::Ones(2), Vec::Constant(2, 2.0), MatchingFamily::tu(Mat::Zero(2, 2)));
        FAIL("expected BalanceViolated");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BalanceViolated);
    }
    Vec bad(2);
    bad << 1.0, -1.0;
    CHECK_THROWS_AS(make_market(bad, Vec::Zero(2), MatchingFamily::tu(Mat::Zero(2, 2))), Error);
    CHECK_THROWS_AS(make_market(Vec::Ones(3), Vec::Constant(2, 1.5), MatchingFamily::tu(Mat::Zero(2, 2))), Error);
}

TEST_CASE("equilibria clear both sides for every family") {
    SolverOptions o;
    o.tol_outer = 1e-10;
    for (auto kind : {FamilyKind::TU, FamilyKind::NTU, FamilyKind::ETU, FamilyKind::ITU}) {
        const auto fm = fixtures::random_market(kind, 31, 3, 4);
        CAPTURE(fm.name);
        const auto eq = solve_mfe(fm.market, Normalization::mean(), 0.0, o);
        CHECK((eq.mu.rowwise().sum() - fm.market.n).cwiseAbs().maxCoeff() <= 10 * o.tol_outer);
        CHECK((eq.mu.colwise().sum().transpose() - fm.market.m).cwiseAbs().maxCoeff() <= 10 * o.tol_outer);
        CHECK(std::abs(Normalization::mean()(matching_prices(eq.a, eq.b))) <= o.tol_bracket);
        CHECK((eq.mu.array() > 0).all());
    }
}

TEST_CASE("fixed effects move monotonically in K and TU matches do not move") {
    const std::vector<double> K{-1.0, -0.5, 0.0, 0.5, 1.0};
    for (auto kind : {FamilyKind::TU, FamilyKind::NTU, FamilyKind::ETU}) {
        const auto fm = fixtures::random_market(kind, 41, 3, 3);
        CAPTURE(fm.name);
        const auto cs = comparative_statics_K(fm.market, Normalization::mean(), K);
        CHECK(cs.a_violations == 0);
        CHECK(cs.b_violations == 0);
        CHECK(cs.a_nonincreasing);
        CHECK(cs.b_nondecreasing);
        if (kind == FamilyKind::TU) CHECK(cs.max_mu_change <= 1e-8);
    }
}

TEST_CASE("transfers are consistent and NTU has none") {
    const auto fm = fixtures::random_market(FamilyKind::ETU, 51, 3, 3);
    const auto eq = solve_mfe(fm.market, Normalization::mean(), 0.0);
    CHECK(transfer_consistency(fm.market.family, eq) < 1e-8);
    const auto ntu = fixtures::random_market(FamilyKind::NTU, 51, 2, 2);
    const auto eq2 = solve_mfe(ntu.market, 0.0);
    try {
        recover_transfers(ntu.market.family, eq2);
        FAIL("expected FamilyLacksTransfers");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::FamilyLacksTransfers);
    }
}

TEST_CASE("cross differences annihilate additive fixed effects") {
    std::mt19937_64 rng(5);
    Mat t = fixtures::random_mat(rng, 3, 4, 1.0);
    Mat shifted = t;
    for (int x = 0; x < 3; ++x) shifted.row(x).array() += 0.7 * x;
    for (int y = 0; y < 4; ++y) shifted.col(y).array() -= 0.3 * y * y;
    const auto a = cross_difference(t), b = cross_difference(shifted);
    CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(a(1, 2, 0, 3) == doctest::Approx((t(1, 2) - t(1, 3)) - (t(0, 2) - t(0, 3))));
}

TEST_CASE("preferences are recovered from an ETU equilibrium") {
    std::mt19937_64 rng(61);
    const Mat alpha = fixtures::random_mat(rng, 3, 3, 0.5), gamma = fixtures::random_mat(rng, 3, 3, 0.5);
    const auto mk = make_market(Vec::Ones(3), Vec::Ones(3), MatchingFamily::etu(alpha, gamma));
    SolverOptions o;
    o.tol_outer = 1e-12;
    o.tol_inner = 1e-15;
    const auto eq = solve_mfe(mk, Normalization::mean(), 0.0, o);
    const Mat w = recover_transfers(mk.family, eq);
    const auto est = identify_preferences(eq.mu, w, eq.a, eq.b, mk.family.distance());
    CHECK((est.alpha - alpha).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((est.gamma - gamma).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("family names round trip") {
    for (auto k : {FamilyKind::TU, FamilyKind::NTU, FamilyKind::ITU, FamilyKind::ETU})
        CHECK(family_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(family_kind_from_string("xtu"), Error);
}

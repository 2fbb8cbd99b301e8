#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "supplyeq/discrete_choice.hpp"
#include "supplyeq/estimation.hpp"
#include "supplyeq/matching.hpp"

// Small markets and demand systems shared by the unit and acceptance tests.
namespace fixtures {

using supplyeq::Mat;
using supplyeq::Vec;

inline Mat random_mat(std::mt19937_64& rng, int r, int c, double scale) {
    std::normal_distribution<double> nd(0.0, scale);
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
    return m;
}

/// Positive masses with equal totals on both sides.
inline std::pair<Vec, Vec> random_masses(std::mt19937_64& rng, int nx, int ny) {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    Vec n(nx), m(ny);
    for (int i = 0; i < nx; ++i) n[i] = u(rng);
    for (int j = 0; j < ny; ++j) m[j] = u(rng);
    m *= n.sum() / m.sum();
    return {n, m};
}

/// d(u, v) = tau log((e^{u/tau} + e^{v/tau}) / 2): closed form, partials by differences.
inline supplyeq::DistanceFunction smoothed_max(double tau) {
    supplyeq::DistanceFunction d;
    d.name = "smoothed_max";
    d.value = [tau](double u, double v) {
        const double hi = std::max(u, v);
        return hi + tau * std::log((std::exp((u - hi) / tau) + std::exp((v - hi) / tau)) / 2.0);
    };
    return d;
}

struct NamedMarket {
    std::string name;
    supplyeq::MarketPrimitives market;
};

inline supplyeq::MatchingFamily make_family(supplyeq::FamilyKind kind, std::mt19937_64& rng, int nx, int ny,
                                            double scale) {
    using supplyeq::MatchingFamily;
    const Mat a = random_mat(rng, nx, ny, scale), g = random_mat(rng, nx, ny, scale);
    switch (kind) {
        case supplyeq::FamilyKind::TU: return MatchingFamily::tu_split(a, g);
        case supplyeq::FamilyKind::NTU: return MatchingFamily::ntu(a);
        case supplyeq::FamilyKind::ETU: return MatchingFamily::etu(a, g);
        case supplyeq::FamilyKind::ITU: break;
    }
    return MatchingFamily::itu(a, g, smoothed_max(0.5));
}

inline NamedMarket random_market(supplyeq::FamilyKind kind, std::uint64_t seed, int nx, int ny, double scale = 0.5) {
    std::mt19937_64 rng(seed);
    auto [n, m] = random_masses(rng, nx, ny);
    auto fam = make_family(kind, rng, nx, ny, scale);
    return {std::string(supplyeq::to_string(kind)) + "-" + std::to_string(nx) + "x" + std::to_string(ny) + "-s" +
                std::to_string(seed),
            supplyeq::make_market(n, m, std::move(fam))};
}

/// The 2x2 and 3x2 TU and ETU markets the grid oracle is run against.
inline std::vector<NamedMarket> oracle_markets() {
    std::vector<NamedMarket> out;
    for (auto kind : {supplyeq::FamilyKind::TU, supplyeq::FamilyKind::ETU}) {
        for (auto [nx, ny] : {std::pair{2, 2}, std::pair{3, 2}}) {
            for (std::uint64_t s : {1u, 2u}) out.push_back(random_market(kind, 100 * nx + s, nx, ny));
        }
    }
    return out;
}

/// Uniform point on the simplex with every share at least `floor`.
inline Vec random_shares(std::mt19937_64& rng, int Z, double floor = 0.01) {
    std::exponential_distribution<double> ex(1.0);
    Vec s(Z);
    for (int z = 0; z < Z; ++z) s[z] = ex(rng);
    s /= s.sum();
    s = (s.array() * (1.0 - Z * floor) + floor).matrix();
    s /= s.sum();
    return s;
}

}  // namespace fixtures

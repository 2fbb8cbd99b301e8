#include "supplyeq/supply_system.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "supplyeq/error.hpp"

namespace supplyeq {

Bounds Bounds::unbounded(int dim) {
    return Bounds{Vec::Constant(dim, -kInf), Vec::Constant(dim, kInf)};
}

bool Bounds::contains(const Vec& p) const {
    if (p.size() != lower.size()) return false;
    for (Eigen::Index z = 0; z < p.size(); ++z) {
        if (!(p[z] > lower[z] && p[z] < upper[z])) return false;
    }
    return true;
}

void Bounds::validate() const {
    if (lower.size() != upper.size()) {
        throw Error(ErrorCode::DimensionMismatch, "bounds: lower and upper differ in size");
    }
    for (Eigen::Index z = 0; z < lower.size(); ++z) {
        if (std::isnan(lower[z]) || std::isnan(upper[z]) || !(lower[z] < upper[z])) {
            throw Error(ErrorCode::InvalidArgument,
                        "bounds: need lower < upper at coordinate " + std::to_string(z));
        }
    }
}

double Bounds::clamp_inside(int z, double t, double margin) const {
    const double lo = lower[z];
    const double hi = upper[z];
    if (std::isfinite(lo) && t <= lo + margin * (1.0 + std::abs(lo))) {
        t = lo + margin * (1.0 + std::abs(lo));
    }
    if (std::isfinite(hi) && t >= hi - margin * (1.0 + std::abs(hi))) {
        t = hi - margin * (1.0 + std::abs(hi));
    }
    return t;
}

SupplySystem::SupplySystem(int dim, EvalFn eval, Bounds bounds, double balance_constant)
    : dim_(dim), eval_(std::move(eval)), bounds_(std::move(bounds)), balance_constant_(balance_constant) {
    if (dim_ < 1) throw Error(ErrorCode::InvalidArgument, "supply system needs at least one coordinate");
    if (!eval_) throw Error(ErrorCode::InvalidArgument, "supply system needs an evaluator");
    if (bounds_.dim() != dim_) throw Error(ErrorCode::DimensionMismatch, "bounds dimension differs from system");
    bounds_.validate();
}

SupplySystem& SupplySystem::set_coordinate_eval(CoordinateFn f) {
    coordinate_eval_ = std::move(f);
    return *this;
}

SupplySystem& SupplySystem::set_coordinate_root(CoordinateRootFn f) {
    coordinate_root_ = std::move(f);
    return *this;
}

SupplySystem& SupplySystem::set_hints(SubsolutionHints hints) {
    if (hints.default_anchor < 0 || hints.default_anchor >= dim_) {
        throw Error(ErrorCode::InvalidArgument, "hint anchor out of range");
    }
    hints_ = std::move(hints);
    return *this;
}

SupplySystem& SupplySystem::set_name(std::string name) {
    name_ = std::move(name);
    return *this;
}

double SupplySystem::coordinate(const Vec& p, int z) const {
    if (coordinate_eval_) return coordinate_eval_(p, z);
    return eval_(p)[z];
}

Vec eval_supply(const SupplySystem& system, const Vec& p) {
    if (p.size() != system.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "price vector has wrong dimension");
    }
    if (!system.bounds().contains(p)) {
        throw Error(ErrorCode::OutOfBounds, "price vector outside the open box");
    }
    Vec out = system(p);
    if (out.size() != system.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "evaluator returned wrong dimension");
    }
    if (!out.allFinite()) {
        throw Error(ErrorCode::NonFinite, "supply evaluation produced a non-finite value");
    }
    return out;
}

double sup_norm(const Vec& v) {
    return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

Normalization Normalization::coordinate_of(int z) {
    Normalization n;
    n.kind = NormalizationKind::Coordinate;
    n.coordinate = z;
    n.eval = [z](const Vec& p) { return p[z]; };
    n.label = "coordinate(" + std::to_string(z) + ")";
    return n;
}

Normalization Normalization::mean() {
    Normalization n;
    n.kind = NormalizationKind::Mean;
    n.eval = [](const Vec& p) { return p.mean(); };
    n.label = "mean";
    return n;
}

Normalization Normalization::max() {
    Normalization n;
    n.kind = NormalizationKind::Max;
    n.eval = [](const Vec& p) { return p.maxCoeff(); };
    n.label = "max";
    return n;
}

Normalization Normalization::min() {
    Normalization n;
    n.kind = NormalizationKind::Min;
    n.eval = [](const Vec& p) { return p.minCoeff(); };
    n.label = "min";
    return n;
}

Vec Normalization::gradient(const Vec& p) const {
    const auto dim = p.size();
    Vec g = Vec::Zero(dim);
    switch (kind) {
        case NormalizationKind::Coordinate:
            g[coordinate] = 1.0;
            return g;
        case NormalizationKind::Mean:
            g.setConstant(1.0 / static_cast<double>(dim));
            return g;
        case NormalizationKind::Max: {
            Eigen::Index i;
            p.maxCoeff(&i);
            g[i] = 1.0;
            return g;
        }
        case NormalizationKind::Min: {
            Eigen::Index i;
            p.minCoeff(&i);
            g[i] = 1.0;
            return g;
        }
        case NormalizationKind::Custom:
            break;
    }
    Vec work = p;
    for (Eigen::Index z = 0; z < dim; ++z) {
        const double h = 1e-6 * (1.0 + std::abs(p[z]));
        work[z] = p[z] + h;
        const double up = eval(work);
        work[z] = p[z] - h;
        const double down = eval(work);
        work[z] = p[z];
        g[z] = (up - down) / (2.0 * h);
    }
    return g;
}

namespace {

double diagonal_root(const std::function<double(const Vec&)>& raw, const Vec& p) {
    const Vec ones = Vec::Ones(p.size());
    auto g = [&](double t) { return raw(p - t * ones); };

    // g is nonincreasing in t; find lo with g(lo) > 0 >= g(hi).
    double lo = 0.0;
    double hi = 0.0;
    const double g0 = g(0.0);
    if (std::isnan(g0)) throw Error(ErrorCode::NonFinite, "renormalize: raw map returned nan");
    if (g0 > 0.0) {
        double step = 1.0;
        bool found = false;
        for (int k = 0; k < 64; ++k) {
            hi = step;
            if (g(hi) <= 0.0) { found = true; break; }
            lo = hi;
            step *= 2.0;
        }
        if (!found) throw Error(ErrorCode::NotDiagonallyStrict, "renormalize: raw map never reaches 0 along the diagonal");
    } else {
        double step = 1.0;
        bool found = false;
        hi = 0.0;
        for (int k = 0; k < 64; ++k) {
            lo = -step;
            if (g(lo) > 0.0) { found = true; break; }
            hi = lo;
            step *= 2.0;
        }
        if (!found) throw Error(ErrorCode::NotDiagonallyStrict, "renormalize: raw map never exceeds 0 along the diagonal");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = lo + 0.5 * (hi - lo);
        if (mid <= lo || mid >= hi) break;
        if (g(mid) > 0.0) lo = mid; else hi = mid;
        if (hi - lo <= 1e-15 * (1.0 + std::abs(hi))) break;
    }
    const double h = 1e-6 * (1.0 + std::abs(hi));
    if (g(hi - h) == g(hi + h)) {
        throw Error(ErrorCode::NotDiagonallyStrict, "renormalize: raw map flat along the diagonal near its root");
    }
    return hi;
}

}  // namespace

Normalization renormalize(std::function<double(const Vec&)> raw, std::string label) {
    if (!raw) throw Error(ErrorCode::InvalidArgument, "renormalize: empty map");
    Normalization n;
    n.kind = NormalizationKind::Custom;
    n.label = std::move(label);
    n.eval = [raw = std::move(raw)](const Vec& p) { return diagonal_root(raw, p); };
    return n;
}

}  // namespace supplyeq

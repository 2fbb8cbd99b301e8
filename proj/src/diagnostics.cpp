#include "supplyeq/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "supplyeq/error.hpp"

namespace supplyeq {

namespace {

constexpr double kBoundMargin = 1e-9;

// Runs probe(i, point) for every sample (in parallel) and merges the
// violations in sample order so reports are deterministic.
PropertyReport run_probe(std::string name, const std::vector<Vec>& points, const SamplingOptions& opts,
                         const std::function<std::vector<Violation>(int, const Vec&)>& probe) {
    const int count = static_cast<int>(points.size());
    std::vector<std::vector<Violation>> found(count);
#pragma omp parallel for schedule(dynamic, 4)
    for (int i = 0; i < count; ++i) {
        found[i] = probe(i, points[i]);
    }
    PropertyReport report;
    report.property_name = std::move(name);
    report.samples_tested = count;
    for (auto& list : found) {
        for (auto& v : list) {
            ++report.violation_count;
            if (report.violations.size() < opts.max_recorded) report.violations.push_back(std::move(v));
        }
    }
    report.passed = report.violation_count == 0;
    return report;
}

double shifted(const SupplySystem& system, int z, double value) {
    return system.bounds().clamp_inside(z, value, kBoundMargin);
}

bool all_finite(const Vec& v) { return v.allFinite(); }

Violation nonfinite_violation(const Vec& p) {
    return Violation{p, {}, {}, "supply evaluation produced a non-finite value"};
}

}  // namespace

std::vector<Vec> sample_points(const SupplySystem& system, const SamplingOptions& opts, int count) {
    std::mt19937_64 rng(opts.seed);
    const int n = system.dim();
    const Bounds& b = system.bounds();
    std::vector<Vec> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        Vec p(n);
        for (int z = 0; z < n; ++z) {
            double lo = std::max(opts.box_low, b.clamp_inside(z, b.lower[z], kBoundMargin));
            double hi = std::min(opts.box_high, b.clamp_inside(z, b.upper[z], kBoundMargin));
            if (!std::isfinite(b.lower[z])) lo = opts.box_low;
            if (!std::isfinite(b.upper[z])) hi = opts.box_high;
            if (!(lo < hi)) {
                lo = b.clamp_inside(z, opts.box_low, kBoundMargin);
                hi = b.clamp_inside(z, opts.box_high, kBoundMargin);
            }
            std::uniform_real_distribution<double> dist(lo, hi);
            p[z] = dist(rng);
        }
        out.push_back(std::move(p));
    }
    return out;
}

PropertyReport check_weak_substitutes(const SupplySystem& system, double h, const SamplingOptions& opts) {
    if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "perturbation must be positive");
    const auto points = sample_points(system, opts, opts.samples);
    const int n = system.dim();
    return run_probe("weak_substitutes", points, opts, [&](int, const Vec& p) {
        std::vector<Violation> out;
        const Vec Q = system(p);
        if (!all_finite(Q)) return std::vector<Violation>{nonfinite_violation(p)};
        for (int y = 0; y < n; ++y) {
            Vec pp = p;
            pp[y] = shifted(system, y, p[y] + h);
            if (!(pp[y] > p[y])) continue;
            const Vec Qp = system(pp);
            if (!all_finite(Qp)) {
                out.push_back(nonfinite_violation(pp));
                continue;
            }
            if (Qp[y] < Q[y] - opts.tol) {
                out.push_back(Violation{p, {y, y}, {Q[y], Qp[y]}, "own supply decreased in own price"});
            }
            for (int x = 0; x < n; ++x) {
                if (x == y) continue;
                if (Qp[x] > Q[x] + opts.tol) {
                    out.push_back(Violation{p, {x, y}, {Q[x], Qp[x]}, "supply increased in another coordinate's price"});
                }
            }
        }
        return out;
    });
}

PropertyReport check_pivotal_substitutes(const SupplySystem& system, const Vec& q, const std::vector<int>& subset,
                                         const SamplingOptions& opts) {
    const int n = system.dim();
    if (q.size() != n) throw Error(ErrorCode::DimensionMismatch, "target vector has wrong dimension");
    std::vector<char> in(n, 0);
    for (int z : subset) {
        if (z < 0 || z >= n) throw Error(ErrorCode::InvalidArgument, "subset coordinate out of range");
        in[z] = 1;
    }
    const int size = static_cast<int>(std::count(in.begin(), in.end(), 1));
    if (size == 0 || size == n) throw Error(ErrorCode::InvalidArgument, "subset must be nonempty and proper");
    double target = 0.0;
    for (int z = 0; z < n; ++z) if (in[z]) target += q[z];

    const auto points = sample_points(system, opts, opts.samples);
    std::string name = "pivotal_substitutes{";
    for (std::size_t i = 0; i < subset.size(); ++i) name += (i ? "," : "") + std::to_string(subset[i]);
    name += "}";
    return run_probe(name, points, opts, [&](int, const Vec& p) {
        std::vector<Violation> out;
        auto subset_sum = [&](double sign, double T) {
            Vec pp = p;
            for (int z = 0; z < n; ++z) if (!in[z]) pp[z] = shifted(system, z, p[z] + sign * T);
            const Vec Q = system(pp);
            double s = 0.0;
            for (int z = 0; z < n; ++z) if (in[z]) s += Q[z];
            return s;
        };
        bool below = false;
        bool above = false;
        double last_up = 0.0;
        double last_down = 0.0;
        for (double T : opts.magnitudes) {
            if (!below) {
                last_up = subset_sum(+1.0, T);
                below = last_up < target - opts.tol_strict;
            }
            if (!above) {
                last_down = subset_sum(-1.0, T);
                above = last_down > target + opts.tol_strict;
            }
        }
        if (!below) out.push_back(Violation{p, subset, {last_up, target}, "subset supply never falls below target as outside prices rise"});
        if (!above) out.push_back(Violation{p, subset, {last_down, target}, "subset supply never exceeds target as outside prices fall"});
        return out;
    });
}

PropertyReport check_pivotal_substitutes_all(const SupplySystem& system, const Vec& q, const SamplingOptions& opts) {
    const int n = system.dim();
    if (n > 12) throw Error(ErrorCode::InvalidArgument, "subset enumeration limited to 12 coordinates");
    PropertyReport total;
    total.property_name = "pivotal_substitutes";
    SamplingOptions sub = opts;
    for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
        std::vector<int> subset;
        for (int z = 0; z < n; ++z) if (mask & (1u << z)) subset.push_back(z);
        const auto r = check_pivotal_substitutes(system, q, subset, sub);
        total.samples_tested += r.samples_tested;
        total.violation_count += r.violation_count;
        for (const auto& v : r.violations) {
            if (total.violations.size() < opts.max_recorded) total.violations.push_back(v);
        }
    }
    total.passed = total.violation_count == 0;
    return total;
}

PropertyReport check_responsiveness(const SupplySystem& system, const Vec& q, int z, const SamplingOptions& opts) {
    const int n = system.dim();
    if (z < 0 || z >= n) throw Error(ErrorCode::InvalidArgument, "coordinate out of range");
    if (q.size() != n) throw Error(ErrorCode::DimensionMismatch, "target vector has wrong dimension");
    const auto points = sample_points(system, opts, opts.samples);
    auto report = run_probe("responsiveness{" + std::to_string(z) + "}", points, opts, [&](int, const Vec& p) {
        std::vector<Violation> out;
        bool up = false;
        bool down = false;
        double last_up = 0.0;
        double last_down = 0.0;
        for (double T : opts.magnitudes) {
            Vec pp = p;
            if (!up) {
                pp[z] = shifted(system, z, p[z] + T);
                last_up = system.coordinate(pp, z);
                up = last_up > q[z];
            }
            if (!down) {
                pp[z] = shifted(system, z, p[z] - T);
                last_down = system.coordinate(pp, z);
                down = last_down < q[z];
            }
        }
        if (!up) out.push_back(Violation{p, {z}, {last_up, q[z]}, "supply stays at or below target as own price rises"});
        if (!down) out.push_back(Violation{p, {z}, {last_down, q[z]}, "supply stays at or above target as own price falls"});
        return out;
    });
    if (report.passed && !points.empty()) {
        const double T = opts.magnitudes.empty() ? 0.0 : opts.magnitudes.back();
        std::ostringstream note;
        note << "coordinate " << z << " crosses its target within [p_z - " << T << ", p_z + " << T << "]";
        report.flags.push_back(note.str());
    }
    return report;
}

PropertyReport check_responsiveness_all(const SupplySystem& system, const Vec& q, const SamplingOptions& opts) {
    PropertyReport total;
    total.property_name = "responsiveness";
    for (int z = 0; z < system.dim(); ++z) {
        const auto r = check_responsiveness(system, q, z, opts);
        total.samples_tested += r.samples_tested;
        total.violation_count += r.violation_count;
        for (const auto& v : r.violations) {
            if (total.violations.size() < opts.max_recorded) total.violations.push_back(v);
        }
    }
    total.passed = total.violation_count == 0;
    return total;
}

PropertyReport check_connected_strict_substitutes(const SupplySystem& system, const SamplingOptions& opts) {
    const int n = system.dim();
    if (n < 2) {
        PropertyReport r;
        r.property_name = "connected_strict_substitutes";
        r.flags.push_back("fewer than two coordinates: no proper subsets");
        return r;
    }
    const auto points = sample_points(system, opts, opts.samples);
    // Subsets and positive raises are drawn serially so the probe is reproducible.
    std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> raise(0.1, 1.0);
    std::vector<std::vector<char>> subsets(points.size());
    std::vector<Vec> raises(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        std::vector<char> in(n, 0);
        int size = 0;
        while (size == 0 || size == n) {
            size = 0;
            for (int z = 0; z < n; ++z) {
                in[z] = static_cast<char>(rng() & 1u);
                size += in[z];
            }
        }
        subsets[i] = in;
        raises[i] = Vec(n);
        for (int z = 0; z < n; ++z) raises[i][z] = raise(rng);
    }
    return run_probe("connected_strict_substitutes", points, opts, [&](int i, const Vec& p) {
        std::vector<Violation> out;
        const auto& in = subsets[i];
        Vec pp = p;
        for (int z = 0; z < n; ++z) if (!in[z]) pp[z] = shifted(system, z, p[z] + raises[i][z]);
        const Vec Q = system(p);
        const Vec Qp = system(pp);
        double before = 0.0;
        double after = 0.0;
        std::vector<int> coords;
        for (int z = 0; z < n; ++z) {
            if (!in[z]) continue;
            before += Q[z];
            after += Qp[z];
            coords.push_back(z);
        }
        if (!(before - after > opts.tol_strict)) {
            out.push_back(Violation{p, coords, {before, after}, "subset supply did not strictly fall when outside prices rose"});
        }
        return out;
    });
}

PropertyReport check_balance(const SupplySystem& system, const SamplingOptions& opts) {
    const auto points = sample_points(system, opts, opts.samples);
    const double c = system.balance_constant();
    return run_probe("balance", points, opts, [&](int, const Vec& p) {
        std::vector<Violation> out;
        const Vec Q = system(p);
        const double gap = std::abs(Q.sum() - c);
        if (!(gap <= 1e-10 * (1.0 + std::abs(c)))) {
            out.push_back(Violation{p, {}, {Q.sum(), c}, "supply does not sum to the balance constant"});
        }
        return out;
    });
}

Vec brute_force_solve(const SupplySystem& system, const Vec& q, int pin, double pin_value, const GridSpec& grid) {
    const int n = system.dim();
    if (pin < 0 || pin >= n) throw Error(ErrorCode::InvalidArgument, "pin coordinate out of range");
    if (q.size() != n) throw Error(ErrorCode::DimensionMismatch, "target vector has wrong dimension");
    if (static_cast<int>(grid.axes.size()) != n - 1) {
        throw Error(ErrorCode::DimensionMismatch, "grid needs one axis per unpinned coordinate");
    }
    if (n - 1 > 4) throw Error(ErrorCode::InvalidArgument, "brute force limited to four free coordinates");

    std::vector<long long> counts;
    double total = 1.0;
    for (const auto& ax : grid.axes) {
        if (!(ax.step > 0.0) || !(ax.low < ax.high)) {
            throw Error(ErrorCode::InvalidArgument, "grid axis needs step > 0 and low < high");
        }
        const auto c = static_cast<long long>(std::floor((ax.high - ax.low) / ax.step + 1e-9)) + 1;
        counts.push_back(c);
        total *= static_cast<double>(c);
    }
    if (total > static_cast<double>(grid.max_points)) {
        throw Error(ErrorCode::GridTooLarge, "grid has " + std::to_string(static_cast<long long>(total)) + " points");
    }
    std::vector<int> free;
    for (int z = 0; z < n; ++z) if (z != pin) free.push_back(z);

    const long long points = static_cast<long long>(total);
    double best_residual = kInf;
    long long best_index = -1;
#pragma omp parallel
    {
        double local_residual = kInf;
        long long local_index = -1;
        Vec p(n);
#pragma omp for schedule(static)
        for (long long idx = 0; idx < points; ++idx) {
            long long rest = idx;
            p[pin] = pin_value;
            for (std::size_t k = free.size(); k-- > 0;) {
                const long long i = rest % counts[k];
                rest /= counts[k];
                p[free[k]] = grid.axes[k].low + static_cast<double>(i) * grid.axes[k].step;
            }
            if (!system.bounds().contains(p)) continue;
            const Vec Q = system(p);
            double r = 0.0;
            for (int z = 0; z < n; ++z) r = std::max(r, std::abs(Q[z] - q[z]));
            if (std::isnan(r)) continue;
            if (r < local_residual) {
                local_residual = r;
                local_index = idx;
            }
        }
#pragma omp critical(supplyeq_grid_best)
        {
            if (local_index >= 0 &&
                (local_residual < best_residual || (local_residual == best_residual && local_index < best_index))) {
                best_residual = local_residual;
                best_index = local_index;
            }
        }
    }
    if (best_index < 0) throw Error(ErrorCode::InvalidArgument, "no admissible grid point");
    Vec p(n);
    p[pin] = pin_value;
    long long rest = best_index;
    for (std::size_t k = free.size(); k-- > 0;) {
        const long long i = rest % counts[k];
        rest /= counts[k];
        p[free[k]] = grid.axes[k].low + static_cast<double>(i) * grid.axes[k].step;
    }
    return p;
}

namespace {

Vec softmax(const Vec& p) {
    const double hi = p.maxCoeff();
    Vec e = (p.array() - hi).exp().matrix();
    return e / e.sum();
}

}  // namespace

PlantedSystem planted_nonmonotone() {
    SupplySystem sys(
        3,
        [](const Vec& p) {
            Vec Q = softmax(p);
            const double bump = 0.5 * std::tanh(p[1]);
            Q[0] += bump;
            Q[2] -= bump;
            return Q;
        },
        Bounds::unbounded(3), 1.0);
    sys.set_name("planted/nonmonotone");
    return PlantedSystem{"nonmonotone", "weak_substitutes", std::move(sys), Vec::Constant(3, 1.0 / 3.0)};
}

PlantedSystem planted_disconnected() {
    SupplySystem sys(
        4,
        [](const Vec& p) {
            Vec Q(4);
            Q.head(2) = 0.5 * softmax(p.head(2));
            Q.tail(2) = 0.5 * softmax(p.tail(2));
            return Q;
        },
        Bounds::unbounded(4), 1.0);
    sys.set_name("planted/disconnected");
    return PlantedSystem{"disconnected", "connected_strict_substitutes", std::move(sys), Vec::Constant(4, 0.25)};
}

PlantedSystem planted_bounded() {
    constexpr int n = 3;
    SupplySystem sys(
        n, [](const Vec& p) { return (0.5 * softmax(p).array() + 0.5 / n).matrix().eval(); }, Bounds::unbounded(n),
        1.0);
    sys.set_name("planted/bounded");
    Vec q(n);
    q << 0.7, 0.15, 0.15;
    return PlantedSystem{"bounded", "responsiveness", std::move(sys), q};
}

PlantedSystem planted_constant() {
    Vec q(3);
    q << 0.2, 0.3, 0.5;
    SupplySystem sys(3, [q](const Vec&) { return q; }, Bounds::unbounded(3), 1.0);
    sys.set_name("planted/constant");
    return PlantedSystem{"constant", "pivotal_substitutes", std::move(sys), q};
}

}  // namespace supplyeq

// Serial reference vs OpenMP kernels: Jacobi sweep, residual, full pinned
// solve and simulated demand. Also confirms the two paths agree bit for bit.
#include <chrono>
#include <cstdio>
#include <random>

#include <CLI11.hpp>
#include <omp.h>

#include "supplyeq/discrete_choice.hpp"
#include "supplyeq/jacobi_kernels.hpp"
#include "supplyeq/matching.hpp"

using namespace supplyeq;

namespace {

template <class F>
double best_of(int reps, F&& f) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        best = std::min(best, dt.count());
    }
    return best;
}

void row(const char* name, double serial, double parallel, bool identical) {
    std::printf("%-22s %12.6f %12.6f %8.2fx  %s\n", name, serial, parallel, serial / parallel,
                identical ? "identical" : "DIFFERENT");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kernel benchmark"};
    int types = 80;
    int goods = 20;
    long draws = 400'000;
    int reps = 3;
    app.add_option("--types", types, "types per side of the TU market");
    app.add_option("--goods", goods, "goods for simulated demand");
    app.add_option("--draws", draws, "simulation draws");
    app.add_option("--reps", reps, "repetitions (best time kept)");
    CLI11_PARSE(app, argc, argv);

    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    Mat phi(types, types);
    for (int i = 0; i < types; ++i)
        for (int j = 0; j < types; ++j) phi(i, j) = nd(rng);
    const auto market = make_market(Vec::Ones(types), Vec::Ones(types), MatchingFamily::tu(phi));
    const SupplySystem sys = build_mfe_system(market);
    const Vec q = matching_target(market);
    const int pin = sys.anchor();
    SolverOptions opts;
    const Vec p0 = build_subsolution(sys, q, pin, 0.0, opts);

    std::printf("threads %d, market %dx%d, demand %d goods x %ld draws\n", omp_get_max_threads(), types, types, goods,
                draws);
    std::printf("%-22s %12s %12s %9s\n", "kernel", "serial s", "parallel s", "speedup");

    Vec ns(p0.size()), np(p0.size());
    const double ts = best_of(reps, [&] { kernels::jacobi_sweep_serial(sys, q, p0, pin, opts, ns); });
    const double tp = best_of(reps, [&] { kernels::jacobi_sweep_parallel(sys, q, p0, pin, opts, np); });
    row("jacobi sweep", ts, tp, ns == np);

    double rs = 0, rp = 0;
    const double ts2 = best_of(reps, [&] { rs = kernels::residual_serial(sys, q, p0); });
    const double tp2 = best_of(reps, [&] { rp = kernels::residual_parallel(sys, q, p0); });
    row("residual", ts2, tp2, rs == rp);

    SolveReport a, b;
    SolverOptions o_s = opts, o_p = opts;
    o_s.parallel = false;
    o_p.parallel = true;
    const double ts3 = best_of(1, [&] { a = solve_pinned(sys, q, pin, 0.0, o_s); });
    const double tp3 = best_of(1, [&] { b = solve_pinned(sys, q, pin, 0.0, o_p); });
    row("pinned solve", ts3, tp3, a.p_star == b.p_star);

    const auto model = DemandModel::logit_mc(goods, DrawConfig{draws, 5});
    Vec delta(goods);
    for (int z = 0; z < goods; ++z) delta[z] = nd(rng);
    Vec ds, dp;
    const double ts4 = best_of(reps, [&] { ds = demand_mc_serial(model, delta); });
    const double tp4 = best_of(reps, [&] { dp = demand_mc(model, delta); });
    row("demand_mc", ts4, tp4, ds == dp);
    return 0;
}

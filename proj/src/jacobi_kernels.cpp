#include "supplyeq/jacobi_kernels.hpp"

#include <cmath>
#include <exception>

namespace supplyeq::kernels {

void jacobi_sweep_serial(const SupplySystem& system, const Vec& q, const Vec& p, int pin,
                         const SolverOptions& opts, Vec& next) {
    const int n = system.dim();
    next.resize(n);
    for (int z = 0; z < n; ++z) {
        if (z == pin) {
            next[z] = p[z];
            continue;
        }
        next[z] = coordinate_update(system, q, p, z, opts);
    }
}

void jacobi_sweep_parallel(const SupplySystem& system, const Vec& q, const Vec& p, int pin,
                           const SolverOptions& opts, Vec& next) {
    const int n = system.dim();
    next.resize(n);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
    for (int z = 0; z < n; ++z) {
        if (z == pin) {
            next[z] = p[z];
            continue;
        }
        try {
            next[z] = coordinate_update(system, q, p, z, opts);
        } catch (...) {
#pragma omp critical(supplyeq_sweep_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
}

double residual_serial(const SupplySystem& system, const Vec& q, const Vec& p) {
    const Vec Q = system(p);
    double r = 0.0;
    for (Eigen::Index z = 0; z < Q.size(); ++z) {
        const double d = std::abs(Q[z] - q[z]);
        if (std::isnan(d)) return d;
        r = std::max(r, d);
    }
    return r;
}

double residual_parallel(const SupplySystem& system, const Vec& q, const Vec& p) {
    const int n = system.dim();
    double r = 0.0;
    bool nan_seen = false;
#pragma omp parallel for reduction(max : r) reduction(|| : nan_seen)
    for (int z = 0; z < n; ++z) {
        const double d = std::abs(system.coordinate(p, z) - q[z]);
        if (std::isnan(d)) nan_seen = true;
        else r = std::max(r, d);
    }
    return nan_seen ? std::nan("") : r;
}

}  // namespace supplyeq::kernels

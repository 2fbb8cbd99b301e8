#pragma once

#include "supplyeq/solver.hpp"

// Jacobi sweeps. Every coordinate update reads only the previous iterate, so
// the OpenMP kernel produces bit-identical output to the serial reference.
namespace supplyeq::kernels {

/// next_z = coordinate_update(p, z) for z != pin, next_pin = p_pin.
void jacobi_sweep_serial(const SupplySystem& system, const Vec& q, const Vec& p, int pin,
                         const SolverOptions& opts, Vec& next);

void jacobi_sweep_parallel(const SupplySystem& system, const Vec& q, const Vec& p, int pin,
                           const SolverOptions& opts, Vec& next);

/// sup_z |Q_z(p) - q_z|, evaluated coordinate by coordinate.
double residual_serial(const SupplySystem& system, const Vec& q, const Vec& p);
double residual_parallel(const SupplySystem& system, const Vec& q, const Vec& p);

}  // namespace supplyeq::kernels

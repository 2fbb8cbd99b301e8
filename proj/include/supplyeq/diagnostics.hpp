#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "supplyeq/supply_system.hpp"

// Sampling probes for the structural properties a supply system must have
// for the solvers to apply. Probes never throw on a failed property.
namespace supplyeq {

struct Violation {
    Vec p;
    std::vector<int> coordinates;
    std::vector<double> observed;
    std::string detail;
};

struct PropertyReport {
    std::string property_name;
    int samples_tested = 0;
    std::size_t violation_count = 0;
    std::vector<Violation> violations;  ///< first `max_recorded` violations, in sample order
    std::vector<std::string> flags;     ///< informational notes that do not fail the probe
    bool passed = true;
};

struct SamplingOptions {
    int samples = 200;
    double box_low = -5.0;
    double box_high = 5.0;
    double tol = 1e-8;
    double tol_strict = 1e-10;
    std::vector<double> magnitudes{10.0, 20.0, 40.0};
    std::uint64_t seed = 20240601;
    std::size_t max_recorded = 25;
};

/// Own-price monotonicity and cross-price antitonicity under a step h.
PropertyReport check_weak_substitutes(const SupplySystem& system, double h, const SamplingOptions& opts = {});

/// Sum over X falls below its target as every coordinate off X rises by T,
/// and rises above it as they fall by T, for some T on the ladder.
PropertyReport check_pivotal_substitutes(const SupplySystem& system, const Vec& q, const std::vector<int>& subset,
                                         const SamplingOptions& opts = {});
/// Every nonempty proper subset (|Z| <= 12).
PropertyReport check_pivotal_substitutes_all(const SupplySystem& system, const Vec& q,
                                             const SamplingOptions& opts = {});

/// Q_z crosses q_z as p_z moves by +-T with the rest held.
PropertyReport check_responsiveness(const SupplySystem& system, const Vec& q, int z, const SamplingOptions& opts = {});
PropertyReport check_responsiveness_all(const SupplySystem& system, const Vec& q, const SamplingOptions& opts = {});

/// For sampled X and p' >= p agreeing on X and strictly larger off X, the sum
/// over X strictly decreases.
PropertyReport check_connected_strict_substitutes(const SupplySystem& system, const SamplingOptions& opts = {});

/// |sum_z Q_z(p) - c| <= 1e-10 (1 + |c|) at sampled p.
PropertyReport check_balance(const SupplySystem& system, const SamplingOptions& opts = {});

struct GridAxis {
    double low;
    double high;
    double step;
};

struct GridSpec {
    std::vector<GridAxis> axes;  ///< one per non-pinned coordinate, in index order
    std::size_t max_points = 50'000'000;
};

/// Exhaustive grid search for the point minimizing sup |Q(p) - q|.
Vec brute_force_solve(const SupplySystem& system, const Vec& q, int pin, double pin_value, const GridSpec& grid);

/// Random points drawn uniformly from the sampling box clipped to the system bounds.
std::vector<Vec> sample_points(const SupplySystem& system, const SamplingOptions& opts, int count);

/// Small systems that each break one property on purpose, with a target q.
struct PlantedSystem {
    std::string name;
    std::string broken_property;
    SupplySystem system;
    Vec q;
};

/// Logit shares with Q_0 pushed up and Q_2 down by 0.5 tanh(p_1): Q_0 rises in p_1.
PlantedSystem planted_nonmonotone();
/// Two independent two-good logit blocks of mass 1/2 each.
PlantedSystem planted_disconnected();
/// Half the mass spread evenly, half by logit: no share can exceed 1/2 + 1/(2n).
PlantedSystem planted_bounded();
/// Q(p) = q everywhere.
PlantedSystem planted_constant();

}  // namespace supplyeq

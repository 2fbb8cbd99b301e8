#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "supplyeq/diagnostics.hpp"
#include "supplyeq/solver.hpp"

// Discrete-choice demand sigma(delta) and its inversion as a supply system
// with prices delta and quantities the market shares.
namespace supplyeq {

using Mat = Eigen::MatrixXd;

/// softmax(delta), log-sum-exp stabilized and renormalized to sum to 1.
Vec demand_logit(const Vec& delta);
/// delta_z = log(s_z / s_{z0}).
Vec invert_logit(const Vec& shares, int benchmark = 0);

/// Throws unless every share is positive and they sum to 1 within 1e-12.
void validate_shares(const Vec& shares);

enum class DemandFamily { Logit, RCLogit, PureCharacteristics, Bridge, Custom };

std::string_view to_string(DemandFamily family) noexcept;
DemandFamily demand_family_from_string(std::string_view name);

struct DrawConfig {
    long draws = 100'000;
    std::uint64_t seed = 0;
};

/// Consumers whose utility for every good is a line in one scalar taste v:
/// U_z = intercept_z + slope_z v. Shares are counted on the sorted draws of v.
struct ScalarTaste {
    std::vector<double> sorted_draws;
    double lower = -kInf;  ///< support of v
    std::function<double(int z, double delta)> intercept;
    std::function<double(int z, double delta)> slope;
    std::function<double(double v)> cdf;  ///< continuum distribution of v
};

class DemandModel {
public:
    using UtilityFn = std::function<double(int z, double delta, double eps)>;

    /// Plain logit in closed form; no draws.
    static DemandModel logit(int goods);
    /// delta + eps with iid Extreme-Value-I draws; closed form kept for comparison.
    static DemandModel logit_mc(int goods, DrawConfig draws);
    /// eps_z = sum_k sigma_k nu_k x_zk + eta_z with nu ~ N(0, 1) and eta EV-I.
    static DemandModel rc_logit(Mat characteristics, Vec sigma, DrawConfig draws);
    /// eps_z = nu x_z with scalar nu ~ N(0, 1).
    static DemandModel pure_characteristics(Vec characteristics, DrawConfig draws);
    /// U_z = -toll_z + delta_z e^{-eps}, eps ~ N(0, 1) shared across lanes; delta < 0.
    static DemandModel bridge(Vec tolls, DrawConfig draws);
    /// Arbitrary utility over an explicit goods x draws shock matrix.
    static DemandModel custom(std::string name, UtilityFn utility, Mat shocks, Bounds bounds);

    DemandFamily family() const { return family_; }
    const std::string& name() const { return name_; }
    int goods() const { return goods_; }
    long draws() const { return draws_; }
    bool simulated() const { return draws_ > 0; }
    /// True when the utility is delta + eps, which gives per-draw thresholds.
    bool additive() const { return additive_; }
    const Bounds& bounds() const { return bounds_; }
    const Mat& shocks() const { return shocks_; }
    const std::optional<ScalarTaste>& scalar_taste() const { return taste_; }
    const std::optional<std::function<Vec(const Vec&)>>& closed_form() const { return closed_form_; }

    double utility(int z, double delta, double eps) const { return utility_(z, delta, eps); }

private:
    DemandModel() = default;

    DemandFamily family_ = DemandFamily::Logit;
    std::string name_;
    int goods_ = 0;
    long draws_ = 0;
    bool additive_ = false;
    UtilityFn utility_;
    Mat shocks_;  ///< goods x draws; empty for scalar-taste and closed-form models
    std::optional<ScalarTaste> taste_;
    std::optional<std::function<Vec(const Vec&)>> closed_form_;
    Bounds bounds_;
};

/// Empirical argmax frequencies over the model's fixed draws, ties to the
/// lowest index. Deterministic for a given seed.
Vec demand_mc(const DemandModel& model, const Vec& delta);
Vec demand_mc_serial(const DemandModel& model, const Vec& delta);
/// Closed form when the model has no draws, simulation otherwise.
Vec demand(const DemandModel& model, const Vec& delta);

/// Q = sigma, c = 1, anchored at good 0. The subsolution envelope for a good
/// is its share when only the goods placed before it are available.
SupplySystem build_demand_system(const DemandModel& model);

struct InversionResult {
    Vec delta;
    SolveReport report;
};

/// Outer tolerance floor for simulated models: shares move in steps of 1/R.
double simulated_share_tolerance(const DemandModel& model);

InversionResult invert_demand(const DemandModel& model, const Vec& shares, const Normalization& norm, double K,
                              const SolverOptions& opts = {});
/// Normalization delta_0 = K.
InversionResult invert_demand(const DemandModel& model, const Vec& shares, double K = 0.0,
                              const SolverOptions& opts = {});

struct UtilityProbeGrid {
    std::vector<double> delta{-3.0, -1.5, -0.5, 0.5, 1.5, 3.0};
    std::vector<double> eps{-2.0, -1.0, 0.0, 1.0, 2.0};
    std::vector<double> magnitudes{10.0, 20.0, 40.0};
    double h = 1e-4;
};

/// Strict monotonicity in eps and in delta on the grid (violations fail the
/// report) and a bounded-above probe in delta (flag only).
PropertyReport check_utility_regularity(const DemandModel& model, const UtilityProbeGrid& grid = {});

/// delta = g(x1 + xi, x2) with g strictly monotone in its first argument.
struct GFamily {
    std::string name;
    std::function<double(double t, double x2)> g;
    /// Optional closed-form inverse in t; numeric bracketing otherwise.
    std::function<double(double delta, double x2)> inverse;

    /// g(t, x2) = t + theta x2.
    static GFamily linear(double theta);
    double invert(double delta, double x2) const;
};

/// xi_z = g^{-1}(delta_z, x2_z) - x1_z.
Vec residual_xi(const Vec& delta, const Vec& x1, const Vec& x2, const GFamily& g);

}  // namespace supplyeq

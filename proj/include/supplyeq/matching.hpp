#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "supplyeq/solver.hpp"

namespace supplyeq {

using Mat = Eigen::MatrixXd;

/// Local expansion of a scalar function of two arguments.
struct SecondOrder {
    double value = 0.0;
    double du = 0.0;
    double dv = 0.0;
    double duu = 0.0;
    double duv = 0.0;
    double dvv = 0.0;
};

/// Distance to the feasibility frontier d(u, v), with d(u + t, v + t) = t + d(u, v).
struct DistanceFunction {
    std::string name;
    std::function<double(double u, double v)> value;
    /// Optional closed-form partials; empty means finite differences.
    std::function<SecondOrder(double u, double v)> expand;

    double operator()(double u, double v) const { return value(u, v); }
    SecondOrder expansion(double u, double v) const;

    /// d(u, v) = (u + v) / 2.
    static DistanceFunction transferable();
    /// d(u, v) = log((e^u + e^v) / 2).
    static DistanceFunction exponential();
    /// Frontier of {(U, V) : U <= utility_x(w), V <= utility_y(w), w > 0} for an
    /// increasing utility_x and decreasing utility_y, solved numerically in log w.
    static DistanceFunction from_transfer_utilities(std::function<double(double w)> utility_x,
                                                    std::function<double(double w)> utility_y,
                                                    std::string name = "frontier");
    /// U = cx log w, V = -cy log w; closed form (cy u + cx v) / (cx + cy).
    static DistanceFunction log_transfer_fixture(double cx, double cy);
};

enum class FamilyKind { TU, NTU, ITU, ETU };

std::string_view to_string(FamilyKind kind) noexcept;
FamilyKind family_kind_from_string(std::string_view name);

/// One of the four matching-function families, evaluated in log domain:
///   TU   log M = (Phi + a + b) / 2      (or (alpha + a + gamma + b) / 2)
///   NTU  log M = Phi + a + b
///   ETU  log M = -log(e^{-a-alpha}/2 + e^{-b-gamma}/2)
///   ITU  log M = -d(-a-alpha, -b-gamma)
class MatchingFamily {
public:
    static MatchingFamily tu(Mat phi);
    static MatchingFamily tu_split(Mat alpha, Mat gamma);
    static MatchingFamily ntu(Mat phi);
    static MatchingFamily etu(Mat alpha, Mat gamma);
    static MatchingFamily itu(Mat alpha, Mat gamma, DistanceFunction d);

    FamilyKind kind() const { return kind_; }
    int rows() const { return static_cast<int>(u_offset_.rows()); }
    int cols() const { return static_cast<int>(u_offset_.cols()); }
    bool has_transfers() const { return has_transfers_; }
    const Mat& alpha() const;
    const Mat& gamma() const;
    /// The distance function with log M = -d(-u, -v); TU and NTU included.
    const DistanceFunction& distance() const { return distance_; }

    double log_match(int x, int y, double a, double b) const;
    double match(int x, int y, double a, double b) const;
    /// log M and its partials in (a, b).
    SecondOrder log_match_expansion(int x, int y, double a, double b) const;
    /// exp of log_match over the whole table.
    Mat match_matrix(const Vec& a, const Vec& b) const;

private:
    MatchingFamily() = default;

    FamilyKind kind_ = FamilyKind::TU;
    Mat u_offset_;  ///< added to a
    Mat v_offset_;  ///< added to b
    bool has_transfers_ = false;
    DistanceFunction distance_;
};

struct MarketPrimitives {
    std::vector<std::string> x_types;
    std::vector<std::string> y_types;
    Vec n;
    Vec m;
    MatchingFamily family;

    int nx() const { return static_cast<int>(n.size()); }
    int ny() const { return static_cast<int>(m.size()); }
    /// Throws on dimension mismatches, nonpositive masses, or unbalanced totals.
    void validate() const;
};

MarketPrimitives make_market(Vec n, Vec m, MatchingFamily family);

/// Prices p = (-a, b) and targets q = (-n, m).
Vec matching_prices(const Vec& a, const Vec& b);
Vec matching_target(const MarketPrimitives& market);

/// Q_x = -sum_y M_xy(-p_x, p_y), Q_y = sum_x M_xy(-p_x, p_y), c = 0, anchored
/// at the first y coordinate.
SupplySystem build_mfe_system(const MarketPrimitives& market);

struct MatchingEquilibrium {
    Vec a;
    Vec b;
    Mat mu;
    double K = 0.0;
    SolveReport report;
};

/// Default normalization over (-a, b): the first y fixed effect.
Normalization default_matching_normalization(const MarketPrimitives& market);

MatchingEquilibrium solve_mfe(const MarketPrimitives& market, const Normalization& norm, double K,
                              const SolverOptions& opts = {});
MatchingEquilibrium solve_mfe(const MarketPrimitives& market, double K = 0.0, const SolverOptions& opts = {});

struct ComparativeStaticsReport {
    std::vector<double> K;
    std::vector<Vec> a;
    std::vector<Vec> b;
    std::vector<Mat> mu;
    int a_violations = 0;
    int b_violations = 0;
    double max_mu_change = 0.0;
    bool a_nonincreasing = true;
    bool b_nondecreasing = true;
};

ComparativeStaticsReport comparative_statics_K(const MarketPrimitives& market, const Normalization& norm,
                                               const std::vector<double>& K_grid, const SolverOptions& opts = {});

/// w_xy = b_y + gamma_xy - a_x - alpha_xy.
Mat recover_transfers(const MatchingFamily& family, const MatchingEquilibrium& eq);
/// max |log mu_xy + d(-a - alpha, -b - gamma)| for the recovered transfers.
double transfer_consistency(const MatchingFamily& family, const MatchingEquilibrium& eq);

struct PreferenceEstimates {
    Mat alpha;
    Mat gamma;
};

/// alpha = log mu - a + d(0, -w), gamma = log mu - b + d(w, 0).
PreferenceEstimates identify_preferences(const Mat& mu, const Mat& w, const Vec& a, const Vec& b,
                                         const DistanceFunction& d);

/// Table over A x A with entry ((x', y'), (x, y)) at row x' * ny + y', column x * ny + y.
struct CrossDifferenceTable {
    int nx = 0;
    int ny = 0;
    Mat values;

    double operator()(int xp, int yp, int x, int y) const { return values(xp * ny + yp, x * ny + y); }
};

/// (T_x'y' - T_x'y) - (T_xy' - T_xy) for every pair of cells.
CrossDifferenceTable cross_difference(const Mat& table);

struct CrossDifferenceEstimates {
    CrossDifferenceTable alpha;
    CrossDifferenceTable gamma;
};

/// Delta alpha = Delta log mu + Delta d(0, -w); Delta gamma = Delta log mu + Delta d(w, 0).
CrossDifferenceEstimates identify_cross_differences(const Mat& mu, const Mat& w, const DistanceFunction& d);

}  // namespace supplyeq

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "supplyeq/discrete_choice.hpp"
#include "supplyeq/matching.hpp"

// Maximum likelihood for parametric matching families (nested and MPEC) and
// GMM for discrete-choice demand.
namespace supplyeq {

using Mat = Eigen::MatrixXd;

struct MatchSample {
    Mat mu_hat;

    /// Throws unless every count is finite and nonnegative with positive margins.
    void validate() const;
    Vec n_hat() const { return mu_hat.rowwise().sum(); }
    Vec m_hat() const { return mu_hat.colwise().sum().transpose(); }
    double total() const { return mu_hat.sum(); }
};

/// alpha(theta) = alpha0 + sum_k theta_k alpha_basis[k], likewise gamma; the
/// family kind decides how (alpha, gamma) enter log M (NTU uses alpha + gamma).
struct ThetaSpec {
    FamilyKind kind = FamilyKind::TU;
    Mat alpha0;
    Mat gamma0;
    std::vector<Mat> alpha_basis;
    std::vector<Mat> gamma_basis;
    std::optional<DistanceFunction> distance;  ///< ITU only
    Vec lower;                                 ///< theta box; empty means unbounded
    Vec upper;

    int dim() const;
    int rows() const { return static_cast<int>(alpha0.rows()); }
    int cols() const { return static_cast<int>(alpha0.cols()); }
    void validate() const;
    Mat alpha(const Vec& theta) const;
    Mat gamma(const Vec& theta) const;
    MatchingFamily family(const Vec& theta) const;
    /// True when theta lies in the declared box.
    bool admissible(const Vec& theta) const;

    /// Phi(theta) = sum_k theta_k basis[k] entering TU as log M = (Phi + a + b) / 2.
    static ThetaSpec tu_linear(std::vector<Mat> basis);
};

struct PredictedFrequencies {
    Mat pi;
    MatchingEquilibrium equilibrium;
};

/// Pi_xy = mu_xy / sum mu at the equilibrium of the market (n, m, family(theta)).
PredictedFrequencies predicted_frequencies(const ThetaSpec& spec, const Vec& theta, const Vec& n, const Vec& m,
                                           const Normalization& norm, double K, const SolverOptions& opts = {});

/// sum_xy mu_hat_xy log Pi_xy.
double log_likelihood(const Mat& mu_hat, const Mat& pi);
double log_likelihood(const MatchSample& sample, const ThetaSpec& spec, const Vec& theta, const Normalization& norm,
                      double K, const SolverOptions& opts = {});

/// Derivatives of the equilibrium fixed effects in theta: (d a / d theta, d b / d theta).
struct FixedEffectSensitivity {
    Mat da;  ///< |X| x d
    Mat db;  ///< |Y| x d
    double condition = 0.0;
};

/// Implicit differentiation of the market-clearing rows augmented with the
/// linearized normalization row. Throws SingularConstraintJacobian when the
/// augmented Jacobian is rank deficient, and reports its condition number.
FixedEffectSensitivity fixed_effect_sensitivity(const ThetaSpec& spec, const Vec& theta,
                                                const MatchingEquilibrium& eq, const Normalization& norm);

struct LikelihoodGradient {
    Vec gradient;
    Mat dpi;  ///< d Pi_xy / d theta_k flattened row-major over cells: (|X||Y|) x d
    bool finite_difference_fallback = false;
};

/// Gradient of the nested log-likelihood at theta given the equilibrium there.
/// Falls back to central differences of the nested likelihood when the
/// constraint Jacobian has condition number above 1e12.
LikelihoodGradient likelihood_gradient(const MatchSample& sample, const ThetaSpec& spec, const Vec& theta,
                                       const MatchingEquilibrium& eq, const Normalization& norm, double K,
                                       const SolverOptions& opts = {});

struct OptimizerOptions {
    double gradient_tol = 1e-6;  ///< on the per-observation gradient
    int max_iter = 500;
    double armijo = 1e-4;
    int max_backtracks = 60;
};

struct MleReport {
    Vec theta;
    Vec a;
    Vec b;
    Mat mu;
    Mat pi;
    double loglik = 0.0;
    Vec gradient;
    double gradient_norm = 0.0;  ///< per observation
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    std::string message;
};

class EstimationError : public Error {
public:
    EstimationError(ErrorCode code, const std::string& what, MleReport best)
        : Error(code, what), best_(std::move(best)) {}
    const MleReport& best() const noexcept { return best_; }

private:
    MleReport best_;
};

/// Quasi-Newton (BFGS, Armijo backtracking) on the nested likelihood. The
/// market is solved at the sample's count scale, so solver.tol_outer is taken
/// relative to the largest margin. Throws
/// EstimationError(OptimizerStalled) with the best iterate when the search
/// cannot progress or the likelihood is flat in some direction.
MleReport mle_nested(const MatchSample& sample, const ThetaSpec& spec, const Normalization& norm, double K,
                     const Vec& theta0, const SolverOptions& solver = {}, const OptimizerOptions& opt = {});

struct MpecPoint {
    Vec theta;
    Vec a;
    Vec b;
    Vec lambda;  ///< |X| + |Y| + 1
};

struct MpecSystem {
    Vec psi;  ///< (Psi1, Psi2, Psi3)
    Mat jacobian;
};

/// First-order system of max l + lambda G over (theta, a, b) with
/// G = (sum_y M - n_hat, sum_x M - m_hat, psi(a, b) - K), and its Jacobian.
MpecSystem mpec_residual(const MpecPoint& point, const MatchSample& sample, const ThetaSpec& spec,
                         const Normalization& norm, double K);

/// Multipliers making the (a, b) stationarity block vanish in least squares;
/// the minimum-norm choice since the clearing rows are linearly dependent.
Vec mpec_multipliers(const Vec& theta, const Vec& a, const Vec& b, const MatchSample& sample, const ThetaSpec& spec,
                     const Normalization& norm, double K);

struct MpecReport {
    MpecPoint point;
    double residual_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Damped Newton on Psi using minimum-norm least-squares steps.
MpecReport mpec_solve(const MpecPoint& start, const MatchSample& sample, const ThetaSpec& spec,
                      const Normalization& norm, double K, double tol = 1e-10, int max_iter = 100);

struct GmmDataset {
    Vec x1;
    Vec x2;
    Vec y;
    Vec s;

    int goods() const { return static_cast<int>(s.size()); }
    void validate() const;
};

/// g family indexed by theta.
using GFamilyFactory = std::function<GFamily(const Vec& theta)>;

/// g(t, x2; theta) = t - theta_0 x2.
GFamilyFactory linear_price_g();

struct GmmOptions {
    bool two_step = false;
    OptimizerOptions optimizer{1e-9, 500, 1e-4, 60};
    SolverOptions solver{};
    Normalization norm = Normalization::coordinate_of(0);
    double K = 0.0;
};

struct GmmReport {
    Vec theta;
    Vec moments;  ///< (m1, m2) at theta
    double objective = 0.0;
    Mat weight;
    Vec delta;
    Vec xi;
    int iterations = 0;
    bool converged = false;
};

/// (m1, m2) = sum_z xi_z (x1_z, y_z) with xi = g^{-1}(delta, x2; theta) - x1.
Vec gmm_moments(const GmmDataset& data, const Vec& delta, const GFamilyFactory& g, const Vec& theta);

/// Minimizes m W m' over theta. delta comes from inverting the observed shares.
GmmReport gmm_nested(const GmmDataset& data, const DemandModel& model, const GFamilyFactory& g, const Mat& W,
                     const Vec& theta0, const GmmOptions& opts = {});

}  // namespace supplyeq

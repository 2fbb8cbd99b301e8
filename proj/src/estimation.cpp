#include "supplyeq/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace supplyeq {

namespace {

constexpr double kPiFloor = 1e-300;

// Sparse gradient of u = a_x + alpha_xy(theta) or v = b_y + gamma_xy(theta)
// over w = (theta, a, b).
using SparseRow = std::vector<std::pair<int, double>>;

struct CellDerivatives {
    double log_m = 0.0;
    double m = 0.0;
    Vec grad_log;  ///< d log M / dw
    Mat hess_log;  ///< d^2 log M / dw^2
};

class LikelihoodModel {
public:
    LikelihoodModel(const ThetaSpec& spec, const Vec& theta, const Vec& a, const Vec& b)
        : spec_(spec), theta_(theta), a_(a), b_(b), family_(spec.family(theta)) {
        d_ = spec.dim();
        nx_ = spec.rows();
        ny_ = spec.cols();
        if (a.size() != nx_ || b.size() != ny_ || theta.size() != d_) {
            throw Error(ErrorCode::DimensionMismatch, "theta, a and b do not match the specification");
        }
    }

    int nw() const { return d_ + nx_ + ny_; }
    int d() const { return d_; }
    int nx() const { return nx_; }
    int ny() const { return ny_; }

    CellDerivatives cell(int x, int y, bool with_hessian) const {
        const SecondOrder e = family_.log_match_expansion(x, y, a_[x], b_[y]);
        const SparseRow du = u_row(x, y);
        const SparseRow dv = v_row(x, y);
        CellDerivatives c;
        c.log_m = e.value;
        c.m = std::exp(e.value);
        c.grad_log = Vec::Zero(nw());
        for (auto [i, s] : du) c.grad_log[i] += e.du * s;
        for (auto [i, s] : dv) c.grad_log[i] += e.dv * s;
        if (with_hessian) {
            c.hess_log = Mat::Zero(nw(), nw());
            for (auto [i, si] : du) {
                for (auto [j, sj] : du) c.hess_log(i, j) += e.duu * si * sj;
                for (auto [j, sj] : dv) {
                    c.hess_log(i, j) += e.duv * si * sj;
                    c.hess_log(j, i) += e.duv * si * sj;
                }
            }
            for (auto [i, si] : dv) for (auto [j, sj] : dv) c.hess_log(i, j) += e.dvv * si * sj;
        }
        return c;
    }

private:
    SparseRow u_row(int x, int y) const {
        SparseRow r{{d_ + x, 1.0}};
        for (int k = 0; k < d_; ++k) {
            if (k < static_cast<int>(spec_.alpha_basis.size()) && spec_.alpha_basis[k](x, y) != 0.0) {
                r.emplace_back(k, spec_.alpha_basis[k](x, y));
            }
        }
        return r;
    }
    SparseRow v_row(int x, int y) const {
        SparseRow r{{d_ + nx_ + y, 1.0}};
        for (int k = 0; k < d_; ++k) {
            if (k < static_cast<int>(spec_.gamma_basis.size()) && spec_.gamma_basis[k](x, y) != 0.0) {
                r.emplace_back(k, spec_.gamma_basis[k](x, y));
            }
        }
        return r;
    }

    const ThetaSpec& spec_;
    Vec theta_;
    Vec a_;
    Vec b_;
    MatchingFamily family_;
    int d_ = 0;
    int nx_ = 0;
    int ny_ = 0;
};

Vec prices_of(const Vec& a, const Vec& b) { return matching_prices(a, b); }

// Gradient of psi(-a, b) over (a, b).
Vec normalization_gradient_ab(const Normalization& norm, const Vec& a, const Vec& b) {
    const Vec g = norm.gradient(prices_of(a, b));
    Vec out(g.size());
    out.head(a.size()) = -g.head(a.size());
    out.tail(b.size()) = g.tail(b.size());
    return out;
}

Mat normalization_hessian_ab(const Normalization& norm, const Vec& a, const Vec& b) {
    const int n = static_cast<int>(a.size() + b.size());
    if (norm.kind != NormalizationKind::Custom) return Mat::Zero(n, n);
    Mat H(n, n);
    Vec w(n);
    w << a, b;
    for (int j = 0; j < n; ++j) {
        const double h = 1e-5 * (1.0 + std::abs(w[j]));
        Vec wp = w, wm = w;
        wp[j] += h;
        wm[j] -= h;
        H.col(j) = (normalization_gradient_ab(norm, wp.head(a.size()), wp.tail(b.size())) -
                    normalization_gradient_ab(norm, wm.head(a.size()), wm.tail(b.size()))) /
                   (2.0 * h);
    }
    return 0.5 * (H + H.transpose());
}

// Every quantity the MPEC system needs, assembled in one pass over cells.
struct ConstraintAssembly {
    double loglik = 0.0;
    Vec grad_l;
    Mat hess_l;
    Vec G;
    Mat JG;                 ///< ng x nw
    std::vector<Mat> HG;    ///< one nw x nw Hessian per constraint
    Mat mu;
};

ConstraintAssembly assemble(const MatchSample& sample, const ThetaSpec& spec, const Vec& theta, const Vec& a,
                            const Vec& b, const Normalization& norm, double K, bool with_hessians) {
    const LikelihoodModel model(spec, theta, a, b);
    const int nx = model.nx();
    const int ny = model.ny();
    const int nw = model.nw();
    const int ng = nx + ny + 1;
    if (sample.mu_hat.rows() != nx || sample.mu_hat.cols() != ny) {
        throw Error(ErrorCode::DimensionMismatch, "sample does not match the specification");
    }
    const Vec n_hat = sample.n_hat();
    const Vec m_hat = sample.m_hat();
    const double N_hat = sample.total();

    ConstraintAssembly out;
    out.grad_l = Vec::Zero(nw);
    out.G = Vec::Zero(ng);
    out.JG = Mat::Zero(ng, nw);
    out.mu = Mat::Zero(nx, ny);
    if (with_hessians) {
        out.hess_l = Mat::Zero(nw, nw);
        out.HG.assign(static_cast<std::size_t>(ng), Mat::Zero(nw, nw));
    }
    double N = 0.0;
    Vec dN = Vec::Zero(nw);
    Mat d2N = with_hessians ? Mat::Zero(nw, nw) : Mat();
    double sum_mu_log = 0.0;
    for (int x = 0; x < nx; ++x) {
        for (int y = 0; y < ny; ++y) {
            const CellDerivatives c = model.cell(x, y, with_hessians);
            const double w = sample.mu_hat(x, y);
            out.mu(x, y) = c.m;
            N += c.m;
            const Vec dM = c.m * c.grad_log;
            dN += dM;
            if (w != 0.0) {
                sum_mu_log += w * c.log_m;
                out.grad_l += w * c.grad_log;
            }
            out.G[x] += c.m;
            out.G[nx + y] += c.m;
            out.JG.row(x) += dM.transpose();
            out.JG.row(nx + y) += dM.transpose();
            if (with_hessians) {
                const Mat d2M = c.m * (c.hess_log + c.grad_log * c.grad_log.transpose());
                d2N += d2M;
                if (w != 0.0) out.hess_l += w * c.hess_log;
                out.HG[static_cast<std::size_t>(x)] += d2M;
                out.HG[static_cast<std::size_t>(nx + y)] += d2M;
            }
        }
    }
    // l = sum mu_hat log M - N_hat log N.
    out.loglik = sum_mu_log - N_hat * std::log(N);
    out.grad_l -= (N_hat / N) * dN;
    if (with_hessians) {
        out.hess_l += -(N_hat / N) * d2N + (N_hat / (N * N)) * dN * dN.transpose();
    }
    out.G.head(nx) -= n_hat;
    out.G.segment(nx, ny) -= m_hat;
    out.G[ng - 1] = norm(prices_of(a, b)) - K;
    out.JG.row(ng - 1).tail(nx + ny) = normalization_gradient_ab(norm, a, b).transpose();
    if (with_hessians) {
        out.HG[static_cast<std::size_t>(ng - 1)].bottomRightCorner(nx + ny, nx + ny) =
            normalization_hessian_ab(norm, a, b);
    }
    return out;
}

// BFGS with Armijo backtracking. f returns nullopt where it cannot be evaluated.
struct MinimizeResult {
    Vec x;
    double f = 0.0;
    Vec g;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    bool stalled = false;
    std::string message;
};

MinimizeResult bfgs_minimize(const std::function<std::optional<double>(const Vec&)>& f,
                             const std::function<Vec(const Vec&)>& grad, const Vec& x0,
                             const OptimizerOptions& opt, const std::function<bool(const Vec&)>& admissible) {
    MinimizeResult r;
    r.x = x0;
    auto f0 = f(x0);
    ++r.evaluations;
    if (!f0) {
        r.stalled = true;
        r.message = "objective cannot be evaluated at the initial point";
        return r;
    }
    r.f = *f0;
    r.g = grad(r.x);
    const int n = static_cast<int>(x0.size());
    if (n == 0) {
        r.converged = true;
        return r;
    }
    Mat H = Mat::Identity(n, n);
    bool scaled = false;
    for (r.iterations = 0; r.iterations < opt.max_iter; ++r.iterations) {
        if (r.g.lpNorm<Eigen::Infinity>() <= opt.gradient_tol) {
            r.converged = true;
            return r;
        }
        Vec dir = -H * r.g;
        double slope = r.g.dot(dir);
        if (!(slope < 0.0)) {
            H.setIdentity();
            dir = -r.g;
            slope = r.g.dot(dir);
        }
        double t = 1.0;
        bool accepted = false;
        Vec x_new;
        double f_new = 0.0;
        for (int bt = 0; bt < opt.max_backtracks; ++bt, t *= 0.5) {
            x_new = r.x + t * dir;
            if (!admissible(x_new)) continue;
            auto fv = f(x_new);
            ++r.evaluations;
            // Strict decrease too: at the rounding floor the Armijo term vanishes.
            if (fv && *fv < r.f && *fv <= r.f + opt.armijo * t * slope) {
                f_new = *fv;
                accepted = true;
                break;
            }
        }
        Vec g_new;
        if (!accepted) {
            // f no longer resolves the step: take the full step when it stays
            // within rounding of f and shrinks the gradient instead.
            x_new = r.x + dir;
            auto fv = admissible(x_new) ? f(x_new) : std::nullopt;
            ++r.evaluations;
            const double floor = 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(r.f));
            if (fv && *fv <= r.f + floor) {
                g_new = grad(x_new);
                accepted = g_new.lpNorm<Eigen::Infinity>() < r.g.lpNorm<Eigen::Infinity>();
                f_new = *fv;
            }
        }
        if (!accepted) {
            r.stalled = true;
            r.message = "line search failed to decrease the objective";
            return r;
        }
        if (g_new.size() == 0) g_new = grad(x_new);
        const Vec s = x_new - r.x;
        const Vec yv = g_new - r.g;
        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            if (!scaled) {
                H *= sy / yv.squaredNorm();
                scaled = true;
            }
            const double rho = 1.0 / sy;
            const Mat I = Mat::Identity(n, n);
            H = (I - rho * s * yv.transpose()) * H * (I - rho * yv * s.transpose()) + rho * s * s.transpose();
        }
        r.x = x_new;
        r.f = f_new;
        r.g = g_new;
    }
    r.converged = r.g.lpNorm<Eigen::Infinity>() <= opt.gradient_tol;
    if (!r.converged) {
        r.stalled = true;
        r.message = "iteration limit reached";
    }
    return r;
}

}  // namespace

void MatchSample::validate() const {
    if (mu_hat.rows() < 1 || mu_hat.cols() < 1) throw Error(ErrorCode::InvalidArgument, "empty sample");
    if (!mu_hat.allFinite() || (mu_hat.array() < 0.0).any()) {
        throw Error(ErrorCode::InvalidArgument, "match counts must be finite and nonnegative");
    }
    if ((n_hat().array() <= 0.0).any() || (m_hat().array() <= 0.0).any()) {
        throw Error(ErrorCode::InvalidArgument, "every type needs at least one observed match");
    }
}

int ThetaSpec::dim() const {
    return static_cast<int>(std::max(alpha_basis.size(), gamma_basis.size()));
}

void ThetaSpec::validate() const {
    if (alpha0.size() == 0 || alpha0.rows() != gamma0.rows() || alpha0.cols() != gamma0.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "alpha0 and gamma0 must be nonempty tables of equal shape");
    }
    for (const auto* basis : {&alpha_basis, &gamma_basis}) {
        for (const Mat& B : *basis) {
            if (B.rows() != alpha0.rows() || B.cols() != alpha0.cols()) {
                throw Error(ErrorCode::DimensionMismatch, "basis table has the wrong shape");
            }
        }
    }
    if (!alpha_basis.empty() && !gamma_basis.empty() && alpha_basis.size() != gamma_basis.size()) {
        throw Error(ErrorCode::DimensionMismatch, "alpha and gamma bases must have equal length when both are given");
    }
    if (kind == FamilyKind::ITU && !distance) throw Error(ErrorCode::InvalidArgument, "ITU needs a distance function");
    if ((lower.size() != 0 && lower.size() != dim()) || (upper.size() != 0 && upper.size() != dim())) {
        throw Error(ErrorCode::DimensionMismatch, "theta box has the wrong dimension");
    }
}

Mat ThetaSpec::alpha(const Vec& theta) const {
    Mat out = alpha0;
    for (std::size_t k = 0; k < alpha_basis.size(); ++k) out += theta[static_cast<Eigen::Index>(k)] * alpha_basis[k];
    return out;
}

Mat ThetaSpec::gamma(const Vec& theta) const {
    Mat out = gamma0;
    for (std::size_t k = 0; k < gamma_basis.size(); ++k) out += theta[static_cast<Eigen::Index>(k)] * gamma_basis[k];
    return out;
}

MatchingFamily ThetaSpec::family(const Vec& theta) const {
    if (theta.size() != dim()) throw Error(ErrorCode::DimensionMismatch, "theta has the wrong dimension");
    switch (kind) {
        case FamilyKind::TU: return MatchingFamily::tu_split(alpha(theta), gamma(theta));
        case FamilyKind::NTU: return MatchingFamily::ntu(alpha(theta) + gamma(theta));
        case FamilyKind::ETU: return MatchingFamily::etu(alpha(theta), gamma(theta));
        case FamilyKind::ITU: return MatchingFamily::itu(alpha(theta), gamma(theta), *distance);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown family");
}

bool ThetaSpec::admissible(const Vec& theta) const {
    if (!theta.allFinite()) return false;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
        if (lower.size() && theta[k] < lower[k]) return false;
        if (upper.size() && theta[k] > upper[k]) return false;
    }
    return true;
}

ThetaSpec ThetaSpec::tu_linear(std::vector<Mat> basis) {
    if (basis.empty()) throw Error(ErrorCode::InvalidArgument, "need at least one basis table");
    ThetaSpec s;
    s.kind = FamilyKind::TU;
    s.alpha0 = Mat::Zero(basis.front().rows(), basis.front().cols());
    s.gamma0 = s.alpha0;
    s.alpha_basis = std::move(basis);
    s.validate();
    return s;
}

PredictedFrequencies predicted_frequencies(const ThetaSpec& spec, const Vec& theta, const Vec& n, const Vec& m,
                                           const Normalization& norm, double K, const SolverOptions& opts) {
    spec.validate();
    const MarketPrimitives market = make_market(n, m, spec.family(theta));
    PredictedFrequencies out;
    out.equilibrium = solve_mfe(market, norm, K, opts);
    out.pi = out.equilibrium.mu / out.equilibrium.mu.sum();
    return out;
}

double log_likelihood(const Mat& mu_hat, const Mat& pi) {
    if (mu_hat.rows() != pi.rows() || mu_hat.cols() != pi.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "sample and predicted tables differ in shape");
    }
    double l = 0.0;
    for (Eigen::Index x = 0; x < pi.rows(); ++x) {
        for (Eigen::Index y = 0; y < pi.cols(); ++y) {
            if (mu_hat(x, y) == 0.0) continue;
            if (!(pi(x, y) > kPiFloor)) {
                throw Error(ErrorCode::ZeroPredictedCell, "observed cell has zero predicted frequency");
            }
            l += mu_hat(x, y) * std::log(pi(x, y));
        }
    }
    return l;
}

double log_likelihood(const MatchSample& sample, const ThetaSpec& spec, const Vec& theta, const Normalization& norm,
                      double K, const SolverOptions& opts) {
    sample.validate();
    const auto pf = predicted_frequencies(spec, theta, sample.n_hat(), sample.m_hat(), norm, K, opts);
    return log_likelihood(sample.mu_hat, pf.pi);
}

FixedEffectSensitivity fixed_effect_sensitivity(const ThetaSpec& spec, const Vec& theta,
                                                const MatchingEquilibrium& eq, const Normalization& norm) {
    MatchSample dummy{Mat::Zero(spec.rows(), spec.cols())};
    const auto as = assemble(dummy, spec, theta, eq.a, eq.b, norm, 0.0, false);
    const int d = spec.dim();
    const int nab = spec.rows() + spec.cols();
    const Mat J_ab = as.JG.rightCols(nab);
    const Mat J_theta = as.JG.leftCols(d);
    Eigen::JacobiSVD<Mat> svd(J_ab, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec sv = svd.singularValues();
    FixedEffectSensitivity out;
    const double smax = sv[0];
    const double smin = sv[sv.size() - 1];
    out.condition = smin > 0.0 ? smax / smin : kInf;
    if (!(smin > 1e-14 * smax)) {
        throw Error(ErrorCode::SingularConstraintJacobian,
                    "constraint Jacobian is singular; the normalization does not pin the shift direction");
    }
    const Mat D = svd.solve(-J_theta);
    out.da = D.topRows(spec.rows());
    out.db = D.bottomRows(spec.cols());
    return out;
}

LikelihoodGradient likelihood_gradient(const MatchSample& sample, const ThetaSpec& spec, const Vec& theta,
                                       const MatchingEquilibrium& eq, const Normalization& norm, double K,
                                       const SolverOptions& opts) {
    const int d = spec.dim();
    const int nx = spec.rows();
    const int ny = spec.cols();
    LikelihoodGradient out;
    out.gradient = Vec::Zero(d);
    out.dpi = Mat::Zero(nx * ny, d);
    if (d == 0) return out;

    const FixedEffectSensitivity sens = fixed_effect_sensitivity(spec, theta, eq, norm);
    if (sens.condition > 1e12) {
        out.finite_difference_fallback = true;
        for (int k = 0; k < d; ++k) {
            const double h = 1e-5 * (1.0 + std::abs(theta[k]));
            Vec tp = theta, tm = theta;
            tp[k] += h;
            tm[k] -= h;
            const auto pp = predicted_frequencies(spec, tp, sample.n_hat(), sample.m_hat(), norm, K, opts);
            const auto pm = predicted_frequencies(spec, tm, sample.n_hat(), sample.m_hat(), norm, K, opts);
            out.gradient[k] = (log_likelihood(sample.mu_hat, pp.pi) - log_likelihood(sample.mu_hat, pm.pi)) / (2.0 * h);
            const Mat dpi = (pp.pi - pm.pi) / (2.0 * h);
            for (int x = 0; x < nx; ++x) for (int y = 0; y < ny; ++y) out.dpi(x * ny + y, k) = dpi(x, y);
        }
        return out;
    }

    // d mu_xy / d theta_k = M_a da_x + M_b db_y + d_theta M, then
    // d Pi = d mu / N - mu / N^2 sum d mu.
    const LikelihoodModel model(spec, theta, eq.a, eq.b);
    Mat dmu(nx * ny, d);
    Mat mu(nx, ny);
    for (int x = 0; x < nx; ++x) {
        for (int y = 0; y < ny; ++y) {
            const CellDerivatives c = model.cell(x, y, false);
            mu(x, y) = c.m;
            for (int k = 0; k < d; ++k) {
                const double dlog = c.grad_log[k] + c.grad_log[d + x] * sens.da(x, k) +
                                    c.grad_log[d + nx + y] * sens.db(y, k);
                dmu(x * ny + y, k) = c.m * dlog;
            }
        }
    }
    const double N = mu.sum();
    const Eigen::RowVectorXd total = dmu.colwise().sum();
    for (int x = 0; x < nx; ++x) {
        for (int y = 0; y < ny; ++y) {
            const int cidx = x * ny + y;
            out.dpi.row(cidx) = dmu.row(cidx) / N - (mu(x, y) / (N * N)) * total;
            if (sample.mu_hat(x, y) != 0.0) {
                out.gradient += (sample.mu_hat(x, y) / (mu(x, y) / N)) * out.dpi.row(cidx).transpose();
            }
        }
    }
    return out;
}

MleReport mle_nested(const MatchSample& sample, const ThetaSpec& spec, const Normalization& norm, double K,
                     const Vec& theta0, const SolverOptions& solver_in, const OptimizerOptions& opt) {
    sample.validate();
    spec.validate();
    if (theta0.size() != spec.dim()) throw Error(ErrorCode::DimensionMismatch, "initial theta has the wrong dimension");
    if (!spec.admissible(theta0)) throw Error(ErrorCode::InvalidArgument, "initial theta outside the declared box");
    const Vec n_hat = sample.n_hat();
    const Vec m_hat = sample.m_hat();
    const double N_hat = sample.total();
    // Market residuals are in counts: read tol_outer relative to the largest margin.
    SolverOptions solver = solver_in;
    solver.tol_outer *= std::max(1.0, std::max(n_hat.maxCoeff(), m_hat.maxCoeff()));

    // Per-observation objective keeps the gradient stop independent of sample size.
    auto f = [&](const Vec& theta) -> std::optional<double> {
        try {
            const auto pf = predicted_frequencies(spec, theta, n_hat, m_hat, norm, K, solver);
            return -log_likelihood(sample.mu_hat, pf.pi) / N_hat;
        } catch (const Error&) {
            return std::nullopt;
        }
    };
    auto grad = [&](const Vec& theta) -> Vec {
        const auto pf = predicted_frequencies(spec, theta, n_hat, m_hat, norm, K, solver);
        return -likelihood_gradient(sample, spec, theta, pf.equilibrium, norm, K, solver).gradient / N_hat;
    };
    auto admissible = [&](const Vec& theta) { return spec.admissible(theta); };
    const MinimizeResult mr = bfgs_minimize(f, grad, theta0, opt, admissible);

    MleReport rep;
    rep.theta = mr.x;
    rep.iterations = mr.iterations;
    rep.evaluations = mr.evaluations;
    rep.message = mr.message;
    const auto pf = predicted_frequencies(spec, mr.x, n_hat, m_hat, norm, K, solver);
    rep.a = pf.equilibrium.a;
    rep.b = pf.equilibrium.b;
    rep.mu = pf.equilibrium.mu;
    rep.pi = pf.pi;
    rep.loglik = log_likelihood(sample.mu_hat, pf.pi);
    rep.gradient = -mr.g * N_hat;
    rep.gradient_norm = mr.g.size() ? mr.g.lpNorm<Eigen::Infinity>() : 0.0;
    rep.converged = mr.converged;
    if (mr.stalled) throw EstimationError(ErrorCode::OptimizerStalled, mr.message, rep);

    // A stationary point can hide a parameter the likelihood ignores.
    for (int k = 0; k < spec.dim(); ++k) {
        const double h = 1e-3 * (1.0 + std::abs(mr.x[k]));
        Vec tp = mr.x, tm = mr.x;
        tp[k] += h;
        tm[k] -= h;
        if (!spec.admissible(tp) || !spec.admissible(tm)) continue;
        const double curvature = std::abs(grad(tp)[k] - grad(tm)[k]) / (2.0 * h);
        if (curvature <= 1e-9) {
            rep.converged = false;
            rep.message = "likelihood is flat in theta[" + std::to_string(k) + "]; parameter not identified";
            throw EstimationError(ErrorCode::OptimizerStalled, rep.message, rep);
        }
    }
    return rep;
}

MpecSystem mpec_residual(const MpecPoint& point, const MatchSample& sample, const ThetaSpec& spec,
                         const Normalization& norm, double K) {
    const int d = spec.dim();
    const int nx = spec.rows();
    const int ny = spec.cols();
    const int nw = d + nx + ny;
    const int ng = nx + ny + 1;
    if (point.theta.size() != d || point.a.size() != nx || point.b.size() != ny || point.lambda.size() != ng) {
        throw Error(ErrorCode::DimensionMismatch, "MPEC point has inconsistent dimensions");
    }
    const auto as = assemble(sample, spec, point.theta, point.a, point.b, norm, K, true);
    MpecSystem out;
    out.psi.resize(nw + ng);
    out.psi.head(nw) = as.grad_l + as.JG.transpose() * point.lambda;
    out.psi.tail(ng) = as.G;
    out.jacobian = Mat::Zero(nw + ng, nw + ng);
    Mat H = as.hess_l;
    for (int j = 0; j < ng; ++j) H += point.lambda[j] * as.HG[static_cast<std::size_t>(j)];
    out.jacobian.topLeftCorner(nw, nw) = H;
    out.jacobian.topRightCorner(nw, ng) = as.JG.transpose();
    out.jacobian.bottomLeftCorner(ng, nw) = as.JG;
    return out;
}

Vec mpec_multipliers(const Vec& theta, const Vec& a, const Vec& b, const MatchSample& sample, const ThetaSpec& spec,
                     const Normalization& norm, double K) {
    const auto as = assemble(sample, spec, theta, a, b, norm, K, false);
    const int nab = spec.rows() + spec.cols();
    const Mat A = as.JG.rightCols(nab).transpose();
    const Vec rhs = -as.grad_l.tail(nab);
    return Eigen::CompleteOrthogonalDecomposition<Mat>(A).solve(rhs);
}

MpecReport mpec_solve(const MpecPoint& start, const MatchSample& sample, const ThetaSpec& spec,
                      const Normalization& norm, double K, double tol, int max_iter) {
    const int d = spec.dim();
    const int nx = spec.rows();
    const int ny = spec.cols();
    auto pack = [&](const MpecPoint& p) {
        Vec z(d + nx + ny + nx + ny + 1);
        z << p.theta, p.a, p.b, p.lambda;
        return z;
    };
    auto unpack = [&](const Vec& z) {
        MpecPoint p;
        p.theta = z.head(d);
        p.a = z.segment(d, nx);
        p.b = z.segment(d + nx, ny);
        p.lambda = z.tail(nx + ny + 1);
        return p;
    };
    MpecReport rep;
    Vec z = pack(start);
    MpecSystem sys = mpec_residual(start, sample, spec, norm, K);
    double r = sys.psi.norm();
    for (rep.iterations = 0; rep.iterations < max_iter && r > tol; ++rep.iterations) {
        // The clearing rows are dependent, so J Psi is singular; take the
        // minimum-norm least-squares Newton step.
        const Vec step = Eigen::CompleteOrthogonalDecomposition<Mat>(sys.jacobian).solve(-sys.psi);
        double t = 1.0;
        bool moved = false;
        for (int bt = 0; bt < 40; ++bt, t *= 0.5) {
            const Vec zn = z + t * step;
            try {
                MpecSystem sn = mpec_residual(unpack(zn), sample, spec, norm, K);
                const double rn = sn.psi.norm();
                if (std::isfinite(rn) && rn < (1.0 - 1e-4 * t) * r) {
                    z = zn;
                    sys = std::move(sn);
                    r = rn;
                    moved = true;
                    break;
                }
            } catch (const Error&) {
            }
        }
        if (!moved) break;
    }
    rep.point = unpack(z);
    rep.residual_norm = r;
    rep.converged = r <= tol;
    return rep;
}

void GmmDataset::validate() const {
    const auto n = s.size();
    if (x1.size() != n || x2.size() != n || y.size() != n) {
        throw Error(ErrorCode::DimensionMismatch, "x1, x2, y and s must have one entry per good");
    }
    validate_shares(s);
}

GFamilyFactory linear_price_g() {
    return [](const Vec& theta) { return GFamily::linear(-theta[0]); };
}

Vec gmm_moments(const GmmDataset& data, const Vec& delta, const GFamilyFactory& g, const Vec& theta) {
    const Vec xi = residual_xi(delta, data.x1, data.x2, g(theta));
    Vec m(2);
    m << xi.dot(data.x1), xi.dot(data.y);
    return m;
}

GmmReport gmm_nested(const GmmDataset& data, const DemandModel& model, const GFamilyFactory& g, const Mat& W,
                     const Vec& theta0, const GmmOptions& opts) {
    data.validate();
    if (W.rows() != 2 || W.cols() != 2) throw Error(ErrorCode::DimensionMismatch, "weight must be 2 x 2");
    if (!W.allFinite() || (W - W.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + W.cwiseAbs().maxCoeff()) ||
        Eigen::LLT<Mat>(W).info() != Eigen::Success) {
        throw Error(ErrorCode::SingularWeight, "weight must be symmetric positive definite");
    }
    // sigma does not depend on theta, so one inversion serves every trial theta.
    const InversionResult inv = invert_demand(model, data.s, opts.norm, opts.K, opts.solver);
    const Vec& delta = inv.delta;

    auto run = [&](const Mat& weight, const Vec& start) {
        auto objective = [&](const Vec& theta) -> std::optional<double> {
            try {
                // Averages rather than sums keep the gradient stop scale-free;
                // the argmin is the same.
                const Vec m = gmm_moments(data, delta, g, theta) / static_cast<double>(data.goods());
                return m.dot(weight * m);
            } catch (const Error&) {
                return std::nullopt;
            }
        };
        auto grad = [&](const Vec& theta) {
            Vec out(theta.size());
            for (Eigen::Index k = 0; k < theta.size(); ++k) {
                const double h = 1e-6 * (1.0 + std::abs(theta[k]));
                Vec tp = theta, tm = theta;
                tp[k] += h;
                tm[k] -= h;
                out[k] = (objective(tp).value_or(kInf) - objective(tm).value_or(kInf)) / (2.0 * h);
            }
            return out;
        };
        return bfgs_minimize(objective, grad, start, opts.optimizer, [](const Vec& t) { return t.allFinite(); });
    };

    MinimizeResult mr = run(W, theta0);
    Mat weight = W;
    if (opts.two_step) {
        const Vec xi = residual_xi(delta, data.x1, data.x2, g(mr.x));
        Mat S = Mat::Zero(2, 2);
        for (int z = 0; z < data.goods(); ++z) {
            Eigen::Vector2d h(data.x1[z], data.y[z]);
            S += xi[z] * xi[z] * h * h.transpose();
        }
        S /= static_cast<double>(data.goods());
        Eigen::LLT<Mat> llt(S);
        if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularWeight, "second-step weight is singular");
        weight = llt.solve(Mat::Identity(2, 2));
        mr = run(weight, mr.x);
    }
    GmmReport rep;
    rep.theta = mr.x;
    rep.moments = gmm_moments(data, delta, g, mr.x);
    rep.objective = rep.moments.dot(weight * rep.moments);
    rep.weight = weight;
    rep.delta = delta;
    rep.xi = residual_xi(delta, data.x1, data.x2, g(mr.x));
    rep.iterations = mr.iterations;
    // Finite-difference noise can stop the line search at the minimum itself.
    rep.converged = mr.converged || (mr.stalled && mr.g.lpNorm<Eigen::Infinity>() <= 1e-6 * (1.0 + mr.f));
    return rep;
}

}  // namespace supplyeq

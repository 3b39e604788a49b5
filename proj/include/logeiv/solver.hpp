#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "data_model.hpp"
#include "errors.hpp"

namespace logeiv {

struct SolverConfig
{
    int max_iter = 10000;
    double tol_primal = 1e-7; // relative
    double tol_dual = 1e-7;   // relative
    double admm_rho = 1.0;
    bool adaptive_rho = true;
    // A candidate support is polished into an exact solution once the ADMM
    // iterate has settled; accepted when its KKT gap is below kkt_tol * lambda.
    bool polish = true;
    double kkt_tol = 1e-6;
    std::optional<VectorXd> warm_start;
    // Unscaled ADMM dual for the split beta = zeta (lies in [-lambda, lambda]).
    std::optional<VectorXd> warm_dual;
};

struct FitResult
{
    VectorXd beta_hat;
    double lambda = 0.0;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double kkt_gap = 0.0;
    double objective = 0.0;
    bool converged = false;
    bool polished = false;
    double rho = 1.0;
    VectorXd dual; // unscaled dual, usable as SolverConfig::warm_dual

    Index support_size() const { return (beta_hat.array() != 0.0).count(); }
};

inline double soft_threshold(double v, double t)
{
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

// (1/2n) ||y - B beta||^2 + lambda ||beta||_1 on the raw design.
inline double lasso_objective(const RegressionData& data, const VectorXd& beta, double lambda)
{
    const VectorXd r = data.response() - data.design() * beta;
    return r.squaredNorm() / (2.0 * static_cast<double>(data.n())) + lambda * beta.lpNorm<1>();
}

inline double constraint_residual(const ConstraintSpec& c, const VectorXd& beta)
{
    return (c.matrix().transpose() * beta).lpNorm<Eigen::Infinity>();
}

namespace detail {

// Orthonormal basis of {v : A^T v = 0} for a k x r matrix A.
inline MatrixXd null_space_of_transpose(const MatrixXd& A)
{
    const Index k = A.rows();
    if (k == 0) return MatrixXd(0, 0);
    if (A.cols() == 0 || A.cwiseAbs().maxCoeff() == 0.0) return MatrixXd::Identity(k, k);
    Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeFullU);
    const auto& s = svd.singularValues();
    const double tol = std::max<double>(static_cast<double>(k), static_cast<double>(A.cols())) *
                       std::numeric_limits<double>::epsilon() * s(0);
    Index rank = 0;
    for (Index i = 0; i < s.size(); ++i) rank += s(i) > tol ? 1 : 0;
    return svd.matrixU().rightCols(k - rank);
}

// Minimizes (1/2n)||y - B_S b||^2 + linear^T b subject to C_S^T b = 0 over
// the coordinates in `support`. Returns the full-length vector, or nullopt
// when the restricted feasible set is {0} only.
inline std::optional<VectorXd> solve_support_qp(const MatrixXd& design, const VectorXd& y,
                                                const ConstraintSpec& constraint, const std::vector<Index>& support,
                                                const VectorXd& linear)
{
    const Index p = design.cols();
    const auto k = static_cast<Index>(support.size());
    VectorXd beta = VectorXd::Zero(p);
    if (k == 0) return beta;
    const MatrixXd Z = null_space_of_transpose(constraint.restrict_rows(support));
    if (Z.cols() == 0) return std::nullopt;
    const double n = static_cast<double>(design.rows());
    MatrixXd BS(design.rows(), k);
    VectorXd lin(k);
    for (Index a = 0; a < k; ++a) {
        BS.col(a) = design.col(support[static_cast<std::size_t>(a)]);
        lin(a) = linear(a);
    }
    const MatrixXd BZ = BS * Z;
    const MatrixXd H = BZ.transpose() * BZ / n;
    const VectorXd rhs = Z.transpose() * (BS.transpose() * y / n - lin);
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(H);
    const VectorXd theta = cod.solve(rhs);
    const VectorXd bs = Z * theta;
    for (Index a = 0; a < k; ++a) beta(support[static_cast<std::size_t>(a)]) = bs(a);
    return beta;
}

// Minimizes t -> max_j (|a_j + c_j t| - off_j), a convex piecewise-linear
// function, by golden-section search on a bracket that provably contains a
// minimizer.
inline double minimize_envelope_1d(const VectorXd& a, const VectorXd& c, const VectorXd& off, double& t_best)
{
    auto f = [&](double t) { return ((a + c * t).cwiseAbs() - off).maxCoeff(); };
    const double cmax = c.cwiseAbs().maxCoeff();
    const double f0 = f(0.0);
    if (cmax == 0.0) {
        t_best = 0.0;
        return f0;
    }
    const double bound = (std::abs(f0) + a.cwiseAbs().maxCoeff() + off.cwiseAbs().maxCoeff()) / cmax + 1.0;
    double lo = -bound, hi = bound;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    t_best = f1 <= f2 ? x1 : x2;
    const double fb = std::min(f1, f2);
    if (f0 <= fb) {
        t_best = 0.0;
        return f0;
    }
    return fb;
}

} // namespace detail

// Stationarity gap of the constrained lasso at a feasible beta:
//   min over kappa of max( max_{j: beta_j != 0} |v_j + lambda sign(beta_j)|,
//                          max_{j: beta_j == 0} |v_j| - lambda ),
//   v = (1/n) Bbar^T (Bbar beta - y) + C kappa,   Bbar = B (I - P_C).
// Values <= 0 (up to rounding) certify optimality. kappa starts at the least
// squares fit on the support equations and is refined coordinate-wise; any
// kappa yields a valid upper bound, so the certificate is conservative.
inline double kkt_certificate(const RegressionData& data, const VectorXd& beta, double lambda)
{
    if (beta.size() != data.p()) throw InputError("kkt_certificate: beta has wrong length");
    if (lambda < 0.0) throw InputError("kkt_certificate: lambda must be nonnegative");
    const auto& cons = data.constraint();
    const double feas = constraint_residual(cons, beta);
    const double cscale = cons.matrix().cwiseAbs().maxCoeff();
    if (feas > 1e-6 * (1.0 + beta.norm()) * cscale)
        throw InputError("kkt_certificate: beta violates the constraint (|C^T beta|_inf = " + std::to_string(feas) + ")");

    const double n = static_cast<double>(data.n());
    const VectorXd resid = data.design() * cons.project_null(beta) - data.response();
    const VectorXd grad = cons.project_null(data.design().transpose() * resid) / n;

    const Index p = data.p();
    VectorXd a(p), off(p);
    std::vector<Index> support;
    for (Index j = 0; j < p; ++j) {
        if (beta(j) != 0.0) {
            a(j) = grad(j) + lambda * (beta(j) > 0.0 ? 1.0 : -1.0);
            off(j) = 0.0;
            support.push_back(j);
        } else {
            a(j) = grad(j);
            off(j) = lambda;
        }
    }
    const MatrixXd& C = cons.matrix();
    VectorXd kappa = VectorXd::Zero(C.cols());
    if (!support.empty()) {
        const MatrixXd CS = cons.restrict_rows(support);
        VectorXd aS(static_cast<Index>(support.size()));
        for (std::size_t k = 0; k < support.size(); ++k) aS(static_cast<Index>(k)) = a(support[k]);
        kappa = -Eigen::CompleteOrthogonalDecomposition<MatrixXd>(CS).solve(aS);
    }
    auto envelope = [&](const VectorXd& kap) { return ((a + C * kap).cwiseAbs() - off).maxCoeff(); };
    double best = envelope(kappa);
    for (int sweep = 0; sweep < 3; ++sweep) {
        const double before = best;
        for (Index d = 0; d < C.cols(); ++d) {
            double t = 0.0;
            const double val = detail::minimize_envelope_1d(a + C * kappa, C.col(d), off, t);
            if (val < best) {
                best = val;
                kappa(d) += t;
            }
        }
        if (!(best < before - 1e-15 * (1.0 + std::abs(before)))) break;
    }
    return best;
}

// Constrained lasso solver for one design. Precomputes a thin SVD of the
// centered design Bbar = B (I - P_C) so that the ADMM beta-step
//   argmin (1/2n)||y - B beta||^2 + (rho/2)||beta - v||^2  s.t. C^T beta = 0
// is a pair of matrix-vector products for every rho; lambda paths, CV folds
// and adaptive rho all reuse the same factorization.
class ConstrainedLasso
{
public:
    explicit ConstrainedLasso(const RegressionData& data) : data_(data)
    {
        const double n = static_cast<double>(data_.n());
        const MatrixXd centered = center_design(data_.design(), data_.constraint());
        Eigen::BDCSVD<MatrixXd> svd(centered, Eigen::ComputeThinV);
        const auto& s = svd.singularValues();
        const double smax = s.size() > 0 ? s(0) : 0.0;
        Index keep = 0;
        for (Index i = 0; i < s.size(); ++i)
            if (s(i) > 1e-12 * smax && s(i) > 0.0) ++keep;
        V_ = svd.matrixV().leftCols(keep);
        curvature_ = s.head(keep).array().square().matrix() / n;
        gram_y_ = data_.constraint().project_null(data_.design().transpose() * data_.response()) / n;
        lambda_max_ = gram_y_.lpNorm<Eigen::Infinity>();
    }

    const RegressionData& data() const { return data_; }

    // ||(1/n) Bbar^T y||_inf; beta = 0 is optimal for every lambda >= this.
    double lambda_max() const { return lambda_max_; }

    FitResult fit(double lambda, const SolverConfig& cfg = {}) const
    {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("lambda must be finite and nonnegative");
        if (cfg.max_iter < 1) throw InputError("max_iter must be positive");
        if (!(cfg.tol_primal > 0.0) || !(cfg.tol_dual > 0.0)) throw InputError("solver tolerances must be positive");
        if (!(cfg.admm_rho > 0.0)) throw InputError("admm_rho must be positive");
        const Index p = data_.p();
        const auto& cons = data_.constraint();

        if (lambda > 0.0 && lambda >= lambda_max_) return zero_fit(lambda, cfg.admm_rho);

        VectorXd zeta = VectorXd::Zero(p);
        if (cfg.warm_start) {
            if (cfg.warm_start->size() != p) throw InputError("warm start has wrong length");
            zeta = *cfg.warm_start;
        }
        double rho = cfg.admm_rho;
        VectorXd y_dual;
        if (cfg.warm_dual && cfg.warm_dual->size() == p) {
            y_dual = *cfg.warm_dual;
        } else {
            y_dual = -gradient(cons.project_null(zeta));
        }
        y_dual = y_dual.cwiseMax(-lambda).cwiseMin(lambda);
        VectorXd u = y_dual / rho;

        VectorXd beta = zeta;
        VectorXd zeta_old = zeta;
        std::vector<Index> last_attempt;
        bool have_attempt = false;
        std::optional<VectorXd> polished;
        double r_norm = 0.0, s_norm = 0.0;
        bool residual_converged = false;
        int it = 0;
        const double sqrt_p = std::sqrt(static_cast<double>(p));

        for (it = 1; it <= cfg.max_iter; ++it) {
            beta = beta_step(zeta - u, rho);
            zeta_old = zeta;
            const double t = lambda / rho;
            for (Index j = 0; j < p; ++j) zeta(j) = soft_threshold(beta(j) + u(j), t);
            u += beta - zeta;

            r_norm = (beta - zeta).norm();
            s_norm = rho * (zeta - zeta_old).norm();
            const double eps_pri = cfg.tol_primal * (sqrt_p * 1e-3 + std::max(beta.norm(), zeta.norm()));
            const double eps_dual = cfg.tol_dual * (sqrt_p * 1e-3 + rho * u.norm());
            residual_converged = r_norm <= eps_pri && s_norm <= eps_dual;

            if (cfg.polish && (residual_converged || it % 10 == 0)) {
                auto support = support_of(zeta);
                const bool fresh = !have_attempt || support != last_attempt || it % 100 == 0;
                if (fresh || residual_converged) {
                    have_attempt = true;
                    last_attempt = support;
                    polished = try_polish(support, zeta, lambda, cfg.kkt_tol);
                    if (polished) break;
                }
            }
            if (residual_converged) break;

            if (cfg.adaptive_rho && it % 10 == 0) {
                if (r_norm > 10.0 * s_norm) {
                    rho *= 2.0;
                    u /= 2.0;
                } else if (s_norm > 10.0 * r_norm) {
                    rho /= 2.0;
                    u *= 2.0;
                }
            }
        }
        const int iterations = std::min(it, cfg.max_iter);

        FitResult res;
        res.lambda = lambda;
        res.iterations = iterations;
        res.primal_residual = r_norm;
        res.dual_residual = s_norm;
        res.rho = rho;
        res.dual = rho * u;
        if (polished) {
            res.beta_hat = *polished;
            res.polished = true;
            res.converged = true;
        } else {
            res.beta_hat = sparse_feasible(zeta);
            res.converged = residual_converged;
        }
        res.objective = lasso_objective(data_, res.beta_hat, lambda);
        res.kkt_gap = kkt_certificate(data_, res.beta_hat, lambda);
        return res;
    }

private:
    VectorXd gradient(const VectorXd& beta) const
    {
        const double n = static_cast<double>(data_.n());
        const VectorXd resid = data_.design() * beta - data_.response();
        return data_.constraint().project_null(data_.design().transpose() * resid) / n;
    }

    // Solves the constrained ridge step on null(C^T) through Bbar = U S V^T:
    //   beta = w / rho + V ((1/(d + rho) - 1/rho) .* (V^T w)),  w = (I - P_C)(Bbar^T y / n + rho v).
    VectorXd beta_step(const VectorXd& v, double rho) const
    {
        const VectorXd w = gram_y_ + rho * data_.constraint().project_null(v);
        VectorXd coef = V_.transpose() * w;
        for (Index k = 0; k < coef.size(); ++k) coef(k) *= 1.0 / (curvature_(k) + rho) - 1.0 / rho;
        return w / rho + V_ * coef;
    }

    static std::vector<Index> support_of(const VectorXd& v)
    {
        std::vector<Index> s;
        for (Index j = 0; j < v.size(); ++j)
            if (v(j) != 0.0) s.push_back(j);
        return s;
    }

    std::optional<VectorXd> try_polish(const std::vector<Index>& support, const VectorXd& zeta, double lambda,
                                       double kkt_tol) const
    {
        VectorXd linear(static_cast<Index>(support.size()));
        for (std::size_t k = 0; k < support.size(); ++k)
            linear(static_cast<Index>(k)) = lambda * (zeta(support[k]) > 0.0 ? 1.0 : -1.0);
        auto cand = detail::solve_support_qp(data_.design(), data_.response(), data_.constraint(), support, linear);
        if (!cand) return std::nullopt;
        for (std::size_t k = 0; k < support.size(); ++k) {
            const double b = (*cand)(support[k]);
            const double z = zeta(support[k]);
            if (b != 0.0 && (b > 0.0) != (z > 0.0)) return std::nullopt;
        }
        const double gap = kkt_certificate(data_, *cand, lambda);
        const double floor = 1e-12 * (1.0 + gram_y_.lpNorm<Eigen::Infinity>());
        if (gap <= kkt_tol * lambda + floor) return cand;
        return std::nullopt;
    }

    // Support of zeta with the coefficients projected onto the restricted
    // constraint, giving exact zeros and exact feasibility.
    VectorXd sparse_feasible(const VectorXd& zeta) const
    {
        const auto support = support_of(zeta);
        VectorXd out = VectorXd::Zero(zeta.size());
        if (support.empty()) return out;
        const MatrixXd Z = detail::null_space_of_transpose(data_.constraint().restrict_rows(support));
        if (Z.cols() == 0) return out;
        VectorXd zs(static_cast<Index>(support.size()));
        for (std::size_t k = 0; k < support.size(); ++k) zs(static_cast<Index>(k)) = zeta(support[k]);
        const VectorXd proj = Z * (Z.transpose() * zs);
        for (std::size_t k = 0; k < support.size(); ++k) out(support[k]) = proj(static_cast<Index>(k));
        return out;
    }

    FitResult zero_fit(double lambda, double rho) const
    {
        FitResult res;
        res.beta_hat = VectorXd::Zero(data_.p());
        res.lambda = lambda;
        res.iterations = 0;
        res.converged = true;
        res.polished = true;
        res.rho = rho;
        res.dual = gram_y_.cwiseMax(-lambda).cwiseMin(lambda);
        res.objective = lasso_objective(data_, res.beta_hat, lambda);
        res.kkt_gap = kkt_certificate(data_, res.beta_hat, lambda);
        return res;
    }

    RegressionData data_;
    MatrixXd V_;
    VectorXd curvature_;
    VectorXd gram_y_;
    double lambda_max_ = 0.0;
};

inline FitResult solve_constrained_lasso(const RegressionData& data, double lambda, const SolverConfig& cfg = {})
{
    return ConstrainedLasso(data).fit(lambda, cfg);
}

inline double lambda_max(const RegressionData& data)
{
    const double n = static_cast<double>(data.n());
    return data.constraint().project_null(data.design().transpose() * data.response()).lpNorm<Eigen::Infinity>() / n;
}

// lambda_max, lambda_max * q, ..., lambda_max * ratio (geometric, num points).
inline std::vector<double> lambda_grid(double lmax, int num, double ratio)
{
    if (num < 2) throw InputError("lambda path needs at least two points");
    if (!(ratio > 0.0 && ratio < 1.0)) throw InputError("lambda path ratio must lie in (0, 1)");
    std::vector<double> grid(static_cast<std::size_t>(num));
    for (int k = 0; k < num; ++k)
        grid[static_cast<std::size_t>(k)] = lmax * std::pow(ratio, static_cast<double>(k) / static_cast<double>(num - 1));
    grid.front() = lmax;
    return grid;
}

struct PathPoint
{
    double lambda = 0.0;
    FitResult fit;
};

// Fits along a decreasing grid, warm-starting each point from the previous
// solution and its dual.
inline std::vector<PathPoint> fit_path(const ConstrainedLasso& solver, const std::vector<double>& grid,
                                       const SolverConfig& cfg = {})
{
    std::vector<PathPoint> out;
    out.reserve(grid.size());
    SolverConfig c = cfg;
    for (double lam : grid) {
        FitResult f = solver.fit(lam, c);
        c.warm_start = f.beta_hat;
        c.warm_dual = f.dual;
        c.admm_rho = f.rho;
        out.push_back({lam, std::move(f)});
    }
    return out;
}

inline std::vector<PathPoint> lambda_path(const RegressionData& data, int num, double ratio, const SolverConfig& cfg = {})
{
    ConstrainedLasso solver(data);
    return fit_path(solver, lambda_grid(solver.lambda_max(), num, ratio), cfg);
}

// Theoretical tuning parameter. Without zeta_max:
//   C sqrt( log p / n (sigma^2 + p / nu_bar ||beta||_2^2) ),
// with zeta_max (overdispersed counts, beta_norm read as ||beta||_1):
//   C sqrt(log p / n) (sigma + sqrt(p zeta_max / nu_bar) ||beta||_1).
// nu_bar may be +inf. The constant C is left to the caller.
inline double theoretical_lambda(double sigma, double p, double n, double nu_bar, double beta_norm,
                                 std::optional<double> zeta_max, double constant)
{
    if (!(p > 1.0) || !(n > 0.0) || !(nu_bar > 0.0) || sigma < 0.0 || beta_norm < 0.0 || !(constant > 0.0))
        throw InputError("theoretical_lambda: invalid arguments");
    const double logp_n = std::log(p) / n;
    const double ratio = std::isinf(nu_bar) ? 0.0 : p / nu_bar;
    if (zeta_max) {
        if (!(*zeta_max > 0.0)) throw InputError("theoretical_lambda: zeta_max must be positive");
        return constant * std::sqrt(logp_n) * (sigma + std::sqrt(ratio * *zeta_max) * beta_norm);
    }
    return constant * std::sqrt(logp_n * (sigma * sigma + ratio * beta_norm * beta_norm));
}

} // namespace logeiv

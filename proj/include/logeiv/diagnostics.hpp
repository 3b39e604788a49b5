#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "benchmark.hpp"
#include "csv.hpp"
#include "data_model.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "selection.hpp"
#include "simulator.hpp"

namespace logeiv {

// ---- restricted isometry ----------------------------------------------------

enum class RipMethod
{
    exhaustive,
    randomized,
};

struct RipOptions
{
    RipMethod method = RipMethod::exhaustive;
    long long num_supports = 10000; // randomized only
    std::uint64_t seed = 1;
    double budget = 1e6; // exhaustive limit on binom(p, s)
    unsigned threads = 1;
};

struct RipReport
{
    Index s = 0;
    double delta_s = 0.0;
    RipMethod method = RipMethod::exhaustive;
    long long supports_checked = 0;
    bool lower_bound = false; // true for randomized scans
    std::string description;
};

inline double binomial_count(Index p, Index s)
{
    double c = 1.0;
    for (Index k = 1; k <= s; ++k) c = c * static_cast<double>(p - s + k) / static_cast<double>(k);
    return std::round(c);
}

namespace detail {

inline double support_delta(const MatrixXd& gram, const std::vector<Index>& idx)
{
    const auto s = static_cast<Index>(idx.size());
    MatrixXd g(s, s);
    for (Index a = 0; a < s; ++a)
        for (Index b = 0; b < s; ++b) g(a, b) = gram(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(g, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    return std::max(ev(s - 1) - 1.0, 1.0 - ev(0));
}

// Advances a sorted combination over [lo, p); false when exhausted.
inline bool next_combination(std::vector<Index>& idx, std::size_t from, Index p)
{
    const std::size_t s = idx.size();
    std::size_t k = s;
    while (k > from) {
        --k;
        if (idx[k] < p - static_cast<Index>(s - k)) {
            ++idx[k];
            for (std::size_t m = k + 1; m < s; ++m) idx[m] = idx[m - 1] + 1;
            return true;
        }
    }
    return false;
}

} // namespace detail

// delta_s = max over |S| = s of max(lambda_max(G_S) - 1, 1 - lambda_min(G_S)),
// G = M^T M / n. The matrix is used as given; see rip_constant_centered.
inline RipReport rip_constant(const MatrixXd& M, Index s, const RipOptions& opt = {})
{
    const Index p = M.cols();
    if (s < 1 || s > p) throw InputError("sparsity s must lie in [1, p]");
    if (M.rows() < 1) throw InputError("matrix has no rows");
    if (!M.allFinite()) throw InputError("matrix has non-finite entries");
    const MatrixXd gram = M.transpose() * M / static_cast<double>(M.rows());
    RipReport rep;
    rep.s = s;
    rep.method = opt.method;
    if (opt.method == RipMethod::exhaustive) {
        const double count = binomial_count(p, s);
        if (count > opt.budget)
            throw BudgetError("exhaustive RIP over binom(" + std::to_string(p) + ", " + std::to_string(s) + ") = " +
                              csv::format_double(count) + " supports exceeds the budget of " +
                              csv::format_double(opt.budget) + "; use the randomized method instead");
        // One task per leading index; the max-reduction is order independent.
        const auto lead = static_cast<std::size_t>(p - s + 1);
        std::vector<double> best(lead, 0.0);
        std::vector<long long> seen(lead, 0);
        parallel_for(lead, opt.threads, [&](std::size_t first) {
            std::vector<Index> idx(static_cast<std::size_t>(s));
            for (Index k = 0; k < s; ++k) idx[static_cast<std::size_t>(k)] = static_cast<Index>(first) + k;
            do {
                best[first] = std::max(best[first], detail::support_delta(gram, idx));
                ++seen[first];
            } while (detail::next_combination(idx, 1, p));
        });
        rep.delta_s = *std::max_element(best.begin(), best.end());
        for (long long c : seen) rep.supports_checked += c;
        rep.lower_bound = false;
    } else {
        if (opt.num_supports < 1) throw InputError("randomized RIP needs at least one support");
        Rng rng = make_rng(opt.seed, {0x41b});
        std::vector<Index> idx;
        for (long long t = 0; t < opt.num_supports; ++t) {
            // Floyd's sampling of s distinct indices.
            idx.clear();
            for (Index j = p - s; j < p; ++j) {
                const Index v = static_cast<Index>(rng() % static_cast<std::uint64_t>(j + 1));
                if (std::find(idx.begin(), idx.end(), v) == idx.end()) idx.push_back(v);
                else idx.push_back(j);
            }
            std::sort(idx.begin(), idx.end());
            rep.delta_s = std::max(rep.delta_s, detail::support_delta(gram, idx));
        }
        rep.supports_checked = opt.num_supports;
        rep.lower_bound = true;
    }
    rep.description = std::to_string(M.rows()) + "x" + std::to_string(p) + " matrix";
    return rep;
}

// RIP of design (I - P_C), the centered form used by the estimator.
inline RipReport rip_constant_centered(const MatrixXd& design, const ConstraintSpec& c, Index s, const RipOptions& opt = {})
{
    RipReport rep = rip_constant(center_design(design, c), s, opt);
    rep.description += ", centered by (I - P_C)";
    return rep;
}

inline const char* to_string(RipMethod m) { return m == RipMethod::exhaustive ? "exhaustive" : "randomized"; }

// ---- bias of log-count estimators -------------------------------------------

struct BiasEstimator
{
    enum Kind
    {
        zero_replace, // log(max(W, c))
        add,          // log(W + c)
    } kind = add;
    double c = 0.5;

    double apply(double w) const { return kind == add ? std::log(w + c) : std::log(std::max(w, c)); }
    std::string name() const { return std::string(kind == add ? "add(" : "zero_replace(") + csv::format_double(c) + ")"; }
};

enum class BiasMode
{
    exact_series,
    monte_carlo,
};

struct BiasCurve
{
    std::vector<double> nu_grid;
    std::vector<BiasEstimator> estimators;
    // bias[e][k]: E phi_e(W) - log nu_k for W ~ Poisson(nu_k).
    std::vector<std::vector<double>> bias;
    std::vector<std::vector<double>> std_error; // zero in exact mode
    std::vector<long long> draws;               // per grid point, Monte Carlo mode
    BiasMode mode = BiasMode::exact_series;
    std::uint64_t seed = 0;
};

// E phi(W), W ~ Poisson(nu), summing the pmf over nu +- (10 sd + 10); the
// neglected tail mass is far below double precision for every phi used here.
template <class Phi>
double poisson_series_expectation(double nu, Phi phi)
{
    if (!(nu > 0.0) || !std::isfinite(nu)) throw InputError("nu must be positive and finite");
    const double sd = std::sqrt(nu);
    const auto lo = static_cast<long long>(std::max(0.0, std::floor(nu - 10.0 * sd - 10.0)));
    const auto hi = static_cast<long long>(std::ceil(nu + 10.0 * sd + 10.0));
    const double lnu = std::log(nu);
    double acc = 0.0, mass = 0.0;
    for (long long k = lo; k <= hi; ++k) {
        const double kk = static_cast<double>(k);
        const double pmf = std::exp(kk * lnu - nu - std::lgamma(kk + 1.0));
        acc += pmf * phi(kk);
        mass += pmf;
    }
    return acc / mass;
}

inline std::vector<BiasEstimator> default_bias_estimators()
{
    return {{BiasEstimator::zero_replace, 0.5}, {BiasEstimator::add, 0.25}, {BiasEstimator::add, 0.5},
            {BiasEstimator::add, 0.75}, {BiasEstimator::add, 1.0}};
}

inline std::vector<double> default_nu_grid() { return {2, 5, 10, 20, 50, 100}; }

// mc_draws = 0 sizes each grid point from a pilot so that every standard
// error is at most target_se.
inline BiasCurve bias_curve(const std::vector<double>& nu_grid, const std::vector<BiasEstimator>& estimators, BiasMode mode,
                            long long mc_draws = 0, std::uint64_t seed = 1, double target_se = 1e-3)
{
    for (double nu : nu_grid)
        if (!(nu > 0.0) || !std::isfinite(nu)) throw InputError("every nu in the grid must be positive and finite");
    for (const auto& e : estimators)
        if (!(e.c > 0.0)) throw InputError("estimator constant must be positive");
    BiasCurve out;
    out.nu_grid = nu_grid;
    out.estimators = estimators;
    out.mode = mode;
    out.seed = seed;
    const std::size_t E = estimators.size(), K = nu_grid.size();
    out.bias.assign(E, std::vector<double>(K, 0.0));
    out.std_error.assign(E, std::vector<double>(K, 0.0));
    out.draws.assign(K, 0);
    for (std::size_t k = 0; k < K; ++k) {
        const double nu = nu_grid[k];
        if (mode == BiasMode::exact_series) {
            for (std::size_t e = 0; e < E; ++e)
                out.bias[e][k] = poisson_series_expectation(nu, [&](double w) { return estimators[e].apply(w); }) - std::log(nu);
            continue;
        }
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(k)});
        std::poisson_distribution<long long> pois(nu);
        long long draws = mc_draws;
        if (draws <= 0) {
            // Pilot for the largest variance across estimators, then a 25% margin.
            const int pilot = 4000;
            std::vector<double> s1(E, 0.0), s2(E, 0.0);
            for (int t = 0; t < pilot; ++t) {
                const double w = static_cast<double>(pois(rng));
                for (std::size_t e = 0; e < E; ++e) {
                    const double v = estimators[e].apply(w);
                    s1[e] += v;
                    s2[e] += v * v;
                }
            }
            double var = 0.0;
            for (std::size_t e = 0; e < E; ++e) var = std::max(var, (s2[e] - s1[e] * s1[e] / pilot) / (pilot - 1));
            draws = std::max<long long>(10000, static_cast<long long>(std::ceil(1.25 * var / (target_se * target_se))));
        }
        out.draws[k] = draws;
        // Welford per estimator on common draws.
        std::vector<double> mean(E, 0.0), m2(E, 0.0);
        for (long long t = 1; t <= draws; ++t) {
            const double w = static_cast<double>(pois(rng));
            for (std::size_t e = 0; e < E; ++e) {
                const double v = estimators[e].apply(w);
                const double d = v - mean[e];
                mean[e] += d / static_cast<double>(t);
                m2[e] += d * (v - mean[e]);
            }
        }
        for (std::size_t e = 0; e < E; ++e) {
            out.bias[e][k] = mean[e] - std::log(nu);
            out.std_error[e][k] = draws > 1 ? std::sqrt(m2[e] / static_cast<double>(draws - 1) / static_cast<double>(draws)) : 0.0;
        }
    }
    return out;
}

inline void write_bias_csv(std::ostream& os, const BiasCurve& c)
{
    os << "nu,estimator,bias,std_error,draws\n";
    for (std::size_t k = 0; k < c.nu_grid.size(); ++k)
        for (std::size_t e = 0; e < c.estimators.size(); ++e)
            os << csv::format_double(c.nu_grid[k]) << ',' << csv::quote(c.estimators[e].name()) << ','
               << csv::format_double(c.bias[e][k]) << ',' << csv::format_double(c.std_error[e][k]) << ',' << c.draws[k] << '\n';
}

// ---- error-rate scans -------------------------------------------------------

// First s entries of the default coefficient vector, re-centered to sum to zero.
inline VectorXd sparse_beta(Index p, Index s)
{
    if (s < 2 || s > 7) throw InputError("sparse_beta supports 2 <= s <= 7");
    const VectorXd base = default_beta(p);
    VectorXd b = VectorXd::Zero(p);
    b.head(s) = base.head(s).array() - base.head(s).mean();
    return b;
}

struct RateScanConfig
{
    SimScenario base;
    std::vector<Index> n_grid{100, 200, 400, 800};
    int replicates = 30;
    MethodSpec method{BenchMethod::oracle, 0.5};
    std::uint64_t seed = 1;
    int folds = 5;
    PathSpec path;
    int bootstrap = 1000;
    double level = 0.95;
    unsigned threads = 1;
};

struct RatePoint
{
    double x = 0.0;              // n, depth multiplier or s
    std::vector<double> errors;  // per replicate, ||beta_hat - beta*||^2
    double median = 0.0;
};

struct RateReport
{
    std::vector<RatePoint> points;
    double slope = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int bootstrap = 0;
};

inline double median_of(std::vector<double> v)
{
    if (v.empty()) throw InputError("median of an empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Least-squares slope of log(median + floor) on log(x). The floor keeps
// all-zero medians (pure-noise controls) finite: all zero gives slope 0.
inline double log_log_slope(const std::vector<double>& x, const std::vector<double>& med, double floor)
{
    const auto k = x.size();
    double mx = 0.0, my = 0.0;
    std::vector<double> lx(k), ly(k);
    for (std::size_t i = 0; i < k; ++i) {
        lx[i] = std::log(x[i]);
        ly[i] = std::log(med[i] + floor);
        mx += lx[i];
        my += ly[i];
    }
    mx /= static_cast<double>(k);
    my /= static_cast<double>(k);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    return sxy / sxx;
}

// One estimation error: simulate, build the method's design, choose lambda by CV.
inline double estimation_error(const SimScenario& sc, const MethodSpec& method, int folds, const PathSpec& path)
{
    const SimDataset ds = simulate(sc);
    RegressionData data(method_design(method, ds), ds.y, scenario_constraint(sc));
    const auto& groups = ds.replicate_groups;
    const CvResult cv = cv_select_lambda(data, folds, path, derive_seed(sc.seed, {0xc5}), groups.empty() ? nullptr : &groups);
    const FitResult fit = solve_constrained_lasso(data, cv.lambda_star);
    return (fit.beta_hat - ds.beta_star).squaredNorm();
}

namespace detail {

// Runs replicates for each scenario variant; slope and bootstrap CI when `fit_slope`.
inline RateReport run_scan(const std::vector<SimScenario>& variants, const std::vector<double>& xs, const RateScanConfig& cfg,
                           bool fit_slope)
{
    if (cfg.replicates < 1) throw InputError("replicates must be at least 1");
    const std::size_t K = variants.size();
    const auto R = static_cast<std::size_t>(cfg.replicates);
    std::vector<double> errs(K * R, 0.0);
    parallel_for(K * R, cfg.threads, [&](std::size_t t) {
        const std::size_t k = t / R, r = t % R;
        SimScenario sc = variants[k];
        sc.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(r)});
        errs[t] = estimation_error(sc, cfg.method, cfg.folds, cfg.path);
    });
    RateReport rep;
    double scale = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        RatePoint pt;
        pt.x = xs[k];
        pt.errors.assign(errs.begin() + static_cast<std::ptrdiff_t>(k * R), errs.begin() + static_cast<std::ptrdiff_t>((k + 1) * R));
        pt.median = median_of(pt.errors);
        scale = std::max(scale, *std::max_element(pt.errors.begin(), pt.errors.end()));
        rep.points.push_back(std::move(pt));
    }
    if (!fit_slope || K < 2) return rep;
    const double floor = 1e-12 * std::max(1.0, scale);
    std::vector<double> med(K);
    for (std::size_t k = 0; k < K; ++k) med[k] = rep.points[k].median;
    rep.slope = log_log_slope(xs, med, floor);
    rep.bootstrap = cfg.bootstrap;
    if (cfg.bootstrap > 0) {
        Rng rng = make_rng(cfg.seed, {0xb007});
        std::vector<double> slopes;
        slopes.reserve(static_cast<std::size_t>(cfg.bootstrap));
        std::vector<double> res(R);
        for (int b = 0; b < cfg.bootstrap; ++b) {
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t r = 0; r < R; ++r) res[r] = rep.points[k].errors[static_cast<std::size_t>(rng() % R)];
                med[k] = median_of(res);
            }
            slopes.push_back(log_log_slope(xs, med, floor));
        }
        std::sort(slopes.begin(), slopes.end());
        const double a = (1.0 - cfg.level) / 2.0;
        const auto at = [&](double q) {
            const double pos = q * static_cast<double>(slopes.size() - 1);
            const auto lo = static_cast<std::size_t>(std::floor(pos));
            const auto hi = std::min(lo + 1, slopes.size() - 1);
            return slopes[lo] + (pos - static_cast<double>(lo)) * (slopes[hi] - slopes[lo]);
        };
        rep.ci_low = at(a);
        rep.ci_high = at(1.0 - a);
    }
    return rep;
}

} // namespace detail

// Median estimation error against n, with the log-log slope.
inline RateReport rate_scan(const RateScanConfig& cfg)
{
    if (cfg.n_grid.size() < 2) throw InputError("rate scan needs at least two sample sizes");
    for (std::size_t k = 1; k < cfg.n_grid.size(); ++k)
        if (cfg.n_grid[k] <= cfg.n_grid[k - 1]) throw InputError("n_grid must be increasing");
    std::vector<SimScenario> variants;
    std::vector<double> xs;
    for (Index n : cfg.n_grid) {
        SimScenario sc = cfg.base;
        sc.n = n;
        variants.push_back(sc);
        xs.push_back(static_cast<double>(n));
    }
    return detail::run_scan(variants, xs, cfg, true);
}

// Depth mean (and NB variance, keeping the coefficient of variation) scaled by each factor.
inline RateReport depth_scan(const RateScanConfig& cfg, const std::vector<double>& factors)
{
    std::vector<SimScenario> variants;
    for (double f : factors) {
        if (!(f > 0.0)) throw InputError("depth factors must be positive");
        SimScenario sc = cfg.base;
        sc.depth.mean *= f;
        sc.depth.variance *= f * f;
        variants.push_back(sc);
    }
    return detail::run_scan(variants, factors, cfg, true);
}

// Sparsity levels via sparse_beta.
inline RateReport sparsity_scan(const RateScanConfig& cfg, const std::vector<Index>& s_values)
{
    std::vector<SimScenario> variants;
    std::vector<double> xs;
    for (Index s : s_values) {
        SimScenario sc = cfg.base;
        sc.beta_star = sparse_beta(sc.p, s);
        variants.push_back(sc);
        xs.push_back(static_cast<double>(s));
    }
    return detail::run_scan(variants, xs, cfg, true);
}

inline void write_rate_csv(std::ostream& os, const RateReport& r, const std::string& x_name)
{
    os << x_name << ",replicate,est_err\n";
    for (const auto& pt : r.points)
        for (std::size_t i = 0; i < pt.errors.size(); ++i)
            os << csv::format_double(pt.x) << ',' << i << ',' << csv::format_double(pt.errors[i]) << '\n';
}

} // namespace logeiv

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "correction.hpp"
#include "data_model.hpp"
#include "errors.hpp"
#include "overdispersion.hpp"
#include "rng.hpp"

namespace logeiv {

enum class DepthLaw
{
    poisson,
    negative_binomial,
};

inline const char* to_string(DepthLaw d) { return d == DepthLaw::poisson ? "poisson" : "negative_binomial"; }

struct DepthSpec
{
    DepthLaw law = DepthLaw::negative_binomial;
    double mean = 3e4;
    double variance = 3e6; // negative binomial only
};

// Components [first, first + count) get mu_j ~ Uniform[lo, hi]. count < 0
// means "all remaining components".
struct MuBlock
{
    Index count = -1;
    double lo = 0.0;
    double hi = 2.0;
};

// Logistic-normal compositions: Phi_ij ~ N(mu_j, within_sd^2), X_i = softmax(Phi_i).
struct CompositionSpec
{
    std::vector<MuBlock> blocks{{3, 1.0, 3.0}, {4, 2.0, 4.0}, {-1, 0.0, 2.0}};
    double within_sd = 1.5;
};

struct SimScenario
{
    Index n = 100;
    Index p = 100;
    DepthSpec depth;
    CompositionSpec composition;
    double alpha = kInfinity;
    VectorXd beta_star; // empty: the default seven-taxon vector padded with zeros
    double sigma = 0.5;
    bool paired = true;        // rows i and i + n/2 share X_i
    bool shared_noise = false; // eps_i = eps_{i + n/2}
    std::uint64_t seed = 1;
    std::optional<MatrixXd> constraint; // empty: 1_p
};

struct SimDataset
{
    CountMatrix counts;
    MatrixXd X_true;
    VectorXd y;
    VectorXd eps;
    VectorXd beta_star;
    VectorXd mu;
    std::vector<ReplicateGroup> replicate_groups;
    std::uint64_t seed = 0;
};

// (1, -0.8, -1.5, 0.6, -0.9, 1.2, 0.4, 0, ..., 0); sums to zero.
inline VectorXd default_beta(Index p)
{
    if (p < 7) throw InputError("the default coefficient vector needs p >= 7");
    VectorXd b = VectorXd::Zero(p);
    b.head(7) << 1.0, -0.8, -1.5, 0.6, -0.9, 1.2, 0.4;
    return b;
}

inline ConstraintSpec scenario_constraint(const SimScenario& sc)
{
    return sc.constraint ? ConstraintSpec(*sc.constraint) : ConstraintSpec::compositional(sc.p);
}

inline VectorXd scenario_beta(const SimScenario& sc)
{
    VectorXd beta = sc.beta_star.size() == 0 ? default_beta(sc.p) : sc.beta_star;
    if (beta.size() != sc.p) throw InputError("beta_star has length " + std::to_string(beta.size()) + ", expected p");
    const ConstraintSpec cons = scenario_constraint(sc);
    const double viol = (cons.matrix().transpose() * beta).lpNorm<Eigen::Infinity>();
    if (viol > 1e-12 * std::max(1.0, beta.lpNorm<1>()))
        throw InputError("beta_star violates the constraint (|C^T beta|_inf = " + std::to_string(viol) + ")");
    return beta;
}

inline void validate_scenario(const SimScenario& sc)
{
    if (sc.n < 1 || sc.p < 2) throw InputError("scenario needs n >= 1 and p >= 2");
    if ((sc.paired || sc.shared_noise) && sc.n % 2 != 0)
        throw InputError("paired scenarios need an even number of samples");
    if (!(sc.depth.mean > 0.0)) throw InputError("depth mean must be positive");
    if (sc.depth.law == DepthLaw::negative_binomial && !(sc.depth.variance > sc.depth.mean))
        throw InputError("negative binomial depths need variance > mean");
    if (!(sc.alpha > 0.0)) throw InputError("alpha must be positive or +inf");
    if (sc.sigma < 0.0) throw InputError("sigma must be nonnegative");
    if (sc.composition.within_sd < 0.0) throw InputError("within_sd must be nonnegative");
}

inline VectorXd sample_mu(const SimScenario& sc, Rng& rng)
{
    VectorXd mu(sc.p);
    Index j = 0;
    for (const auto& blk : sc.composition.blocks) {
        if (blk.hi < blk.lo) throw InputError("mu block has hi < lo");
        const Index end = blk.count < 0 ? sc.p : std::min(sc.p, j + blk.count);
        std::uniform_real_distribution<double> unif(blk.lo, blk.hi);
        for (; j < end; ++j) mu(j) = blk.lo == blk.hi ? blk.lo : unif(rng);
    }
    if (j < sc.p) throw InputError("mu layout covers only " + std::to_string(j) + " of " + std::to_string(sc.p) + " components");
    return mu;
}

// Rows are softmax(Phi_i). With the paired flag row i + n/2 copies row i.
inline MatrixXd sample_compositions(const SimScenario& sc, const VectorXd& mu, Rng& rng)
{
    const Index distinct = sc.paired ? sc.n / 2 : sc.n;
    MatrixXd X(sc.n, sc.p);
    std::normal_distribution<double> z(0.0, 1.0);
    VectorXd phi(sc.p);
    for (Index i = 0; i < distinct; ++i) {
        for (Index j = 0; j < sc.p; ++j) phi(j) = mu(j) + sc.composition.within_sd * z(rng);
        const double m = phi.maxCoeff();
        const VectorXd e = (phi.array() - m).exp().matrix();
        X.row(i) = (e / e.sum()).transpose();
        if (sc.paired) X.row(i + distinct) = X.row(i);
    }
    return X;
}

inline MatrixXd sample_compositions(const SimScenario& sc)
{
    validate_scenario(sc);
    Rng mu_rng = make_rng(sc.seed, {0});
    Rng x_rng = make_rng(sc.seed, {1});
    return sample_compositions(sc, sample_mu(sc, mu_rng), x_rng);
}

inline std::int64_t sample_depth(const DepthSpec& d, Rng& rng)
{
    double rate = d.mean;
    if (d.law == DepthLaw::negative_binomial) {
        // Gamma-Poisson mixture with size m^2 / (v - m) reproduces mean m, variance v.
        const double size = d.mean * d.mean / (d.variance - d.mean);
        std::gamma_distribution<double> g(size, d.mean / size);
        rate = g(rng);
    }
    std::poisson_distribution<std::int64_t> pois(rate);
    return pois(rng);
}

// Dirichlet(shape) draw computed in log space: for shape a < 1 uses
// Gamma(a) = Gamma(a + 1) * U^(1/a), so tiny shapes do not underflow.
inline VectorXd sample_dirichlet(const VectorXd& shape, Rng& rng)
{
    const Index p = shape.size();
    VectorXd logg(p);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Index j = 0; j < p; ++j) {
        const double a = shape(j);
        if (a >= 1.0) {
            std::gamma_distribution<double> g(a, 1.0);
            logg(j) = std::log(g(rng));
        } else {
            std::gamma_distribution<double> g(a + 1.0, 1.0);
            double u = unif(rng);
            while (u <= 0.0) u = unif(rng);
            logg(j) = std::log(g(rng)) + std::log(u) / a;
        }
    }
    const double m = logg.maxCoeff();
    VectorXd q = (logg.array() - m).exp().matrix();
    return q / q.sum();
}

// Sequential conditional binomials; row sums equal `total` exactly.
inline CountVector sample_multinomial(std::int64_t total, const VectorXd& prob, Rng& rng)
{
    const Index p = prob.size();
    CountVector w = CountVector::Zero(p);
    VectorXd tail(p + 1);
    tail(p) = 0.0;
    for (Index j = p - 1; j >= 0; --j) tail(j) = tail(j + 1) + prob(j);
    std::int64_t left = total;
    for (Index j = 0; j < p - 1 && left > 0; ++j) {
        const double q = tail(j) > 0.0 ? std::clamp(prob(j) / tail(j), 0.0, 1.0) : 0.0;
        std::binomial_distribution<std::int64_t> bin(left, q);
        w(j) = bin(rng);
        left -= w(j);
    }
    w(p - 1) += left;
    return w;
}

// W_i | N_i ~ DM(N_i, alpha X_i); multinomial for alpha = +inf.
inline CountVector sample_dm_row(std::int64_t total, const VectorXd& x, double alpha, Rng& rng)
{
    if (std::isinf(alpha)) return sample_multinomial(total, x, rng);
    return sample_multinomial(total, sample_dirichlet(alpha * x, rng), rng);
}

inline CountMatrix sample_counts(const SimScenario& sc, const MatrixXd& X, Rng& rng)
{
    if (!(sc.alpha > 0.0)) throw InputError("alpha must be positive or +inf");
    CountArray W(X.rows(), X.cols());
    for (Index i = 0; i < X.rows(); ++i) {
        const std::int64_t N = sample_depth(sc.depth, rng);
        W.row(i) = sample_dm_row(N, X.row(i).transpose(), sc.alpha, rng).transpose();
    }
    return CountMatrix(std::move(W));
}

struct ResponseDraw
{
    VectorXd y;
    VectorXd eps;
};

inline ResponseDraw sample_response(const SimScenario& sc, const MatrixXd& X, const VectorXd& beta, Rng& rng)
{
    if (beta.size() != X.cols()) throw InputError("beta_star length does not match the composition matrix");
    const Index n = X.rows();
    VectorXd eps(n);
    std::normal_distribution<double> z(0.0, 1.0);
    if (sc.shared_noise) {
        if (n % 2 != 0) throw InputError("shared noise needs an even number of samples");
        for (Index i = 0; i < n / 2; ++i) eps(i) = sc.sigma * z(rng);
        eps.tail(n / 2) = eps.head(n / 2);
    } else {
        for (Index i = 0; i < n; ++i) eps(i) = sc.sigma * z(rng);
    }
    const VectorXd y = X.array().log().matrix() * beta + eps;
    return {y, eps};
}

// A dataset from fixed mu using streams derived from `stream_seed`.
inline SimDataset simulate_with_mu(const SimScenario& sc, const VectorXd& mu, std::uint64_t stream_seed)
{
    validate_scenario(sc);
    const VectorXd beta = scenario_beta(sc);
    Rng x_rng = make_rng(stream_seed, {1});
    Rng w_rng = make_rng(stream_seed, {2});
    Rng e_rng = make_rng(stream_seed, {3});
    MatrixXd X = sample_compositions(sc, mu, x_rng);
    CountMatrix W = sample_counts(sc, X, w_rng);
    auto [y, eps] = sample_response(sc, X, beta, e_rng);
    std::vector<ReplicateGroup> groups;
    if (sc.paired) groups = pair_halves(sc.n);
    return SimDataset{std::move(W), std::move(X), std::move(y), std::move(eps), beta, mu, std::move(groups), stream_seed};
}

inline SimDataset simulate(const SimScenario& sc)
{
    validate_scenario(sc);
    Rng mu_rng = make_rng(sc.seed, {0});
    const VectorXd mu = sample_mu(sc, mu_rng);
    return simulate_with_mu(sc, mu, sc.seed);
}

// An independent draw sharing the scenario's mu (used as a test set).
inline SimDataset simulate_test_draw(const SimScenario& sc, const SimDataset& train)
{
    return simulate_with_mu(sc, train.mu, derive_seed(sc.seed, {0x7e57}));
}

} // namespace logeiv

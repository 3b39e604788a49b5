#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "logeiv/diagnostics.hpp"
#include "oracles.hpp"

using namespace logeiv;

namespace {

MatrixXd gaussian(Index n, Index p, std::uint64_t seed)
{
    std::mt19937_64 g(seed);
    std::normal_distribution<double> z;
    MatrixXd m(n, p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) m(i, j) = z(g);
    return m;
}

double exact_bias(double nu, const BiasEstimator& e)
{
    return oracle::poisson_expectation(nu, [&](double w) { return e.apply(w); }) - std::log(nu);
}

} // namespace

TEST(Rip, ScaledOrthonormalColumnsGiveZero)
{
    const Index n = 12, p = 6;
    Eigen::HouseholderQR<MatrixXd> qr(gaussian(n, p, 1));
    const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(n, p);
    const MatrixXd M = std::sqrt(static_cast<double>(n)) * Q;
    for (Index s = 1; s <= p; ++s) EXPECT_LE(rip_constant(M, s).delta_s, 1e-12) << "s = " << s;
}

TEST(Rip, MatchesEigenScanOracle)
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const MatrixXd M = gaussian(10, 6, seed);
        const RipReport r = rip_constant(M, 2);
        EXPECT_NEAR(r.delta_s, oracle::exhaustive_rip(M, 2), 1e-10);
        EXPECT_EQ(r.supports_checked, 15);
        EXPECT_FALSE(r.lower_bound);
    }
    const MatrixXd M = gaussian(15, 9, 7);
    RipOptions opt;
    opt.threads = 3;
    EXPECT_NEAR(rip_constant(M, 4, opt).delta_s, oracle::exhaustive_rip(M, 4), 1e-10);
}

TEST(Rip, DuplicatedColumnIsSingular)
{
    MatrixXd M = gaussian(20, 5, 3);
    M.col(3) = M.col(1);
    for (Index s = 2; s <= 4; ++s) EXPECT_GE(rip_constant(M, s).delta_s, 1.0 - 1e-12);
}

TEST(Rip, PermutationAndSignInvariance)
{
    const MatrixXd M = gaussian(12, 7, 4);
    MatrixXd P = M;
    const std::vector<Index> order{4, 0, 6, 2, 1, 5, 3};
    for (Index j = 0; j < 7; ++j) P.col(j) = M.col(order[static_cast<std::size_t>(j)]);
    P.col(2) *= -1.0;
    P.col(5) *= -1.0;
    for (Index s : {2, 3}) EXPECT_NEAR(rip_constant(M, s).delta_s, rip_constant(P, s).delta_s, 1e-12);
}

TEST(Rip, BudgetAndRandomized)
{
    const MatrixXd M = gaussian(30, 60, 5);
    RipOptions opt;
    opt.budget = 1000;
    try {
        rip_constant(M, 3, opt);
        FAIL();
    } catch (const BudgetError& e) {
        EXPECT_NE(std::string(e.what()).find("randomized"), std::string::npos);
    }
    opt.method = RipMethod::randomized;
    opt.num_supports = 500;
    const RipReport r = rip_constant(M, 3, opt);
    EXPECT_TRUE(r.lower_bound);
    EXPECT_EQ(r.supports_checked, 500);
    RipOptions full;
    EXPECT_LE(r.delta_s, rip_constant(M, 3, full).delta_s + 1e-12);
    EXPECT_THROW(rip_constant(M, 0), InputError);
    EXPECT_THROW(rip_constant(M, 61), InputError);
}

TEST(Rip, CenteredMatchesExplicitProduct)
{
    const MatrixXd B = gaussian(20, 6, 6);
    const MatrixXd ref = B * oracle::explicit_projector(MatrixXd::Ones(6, 1));
    EXPECT_NEAR(rip_constant_centered(B, ConstraintSpec::compositional(6), 2).delta_s, oracle::exhaustive_rip(ref, 2), 1e-10);
}

TEST(Bias, SeriesMatchesOracle)
{
    for (double nu : default_nu_grid())
        for (const auto& e : default_bias_estimators()) {
            const BiasCurve c = bias_curve({nu}, {e}, BiasMode::exact_series);
            EXPECT_NEAR(c.bias[0][0], exact_bias(nu, e), 1e-12) << e.name() << " nu " << nu;
        }
}

TEST(Bias, HalfOffsetBeatsZeroReplacementAt50)
{
    const BiasEstimator add{BiasEstimator::add, 0.5};
    const BiasEstimator zr{BiasEstimator::zero_replace, 0.5};
    EXPECT_LT(std::abs(exact_bias(50, add)), std::abs(exact_bias(50, zr)));
}

TEST(Bias, VanishesForLargeNu)
{
    const BiasCurve c = bias_curve({1e4}, {{BiasEstimator::add, 0.5}}, BiasMode::exact_series);
    EXPECT_LE(std::abs(c.bias[0][0]), 1e-3);
}

TEST(Bias, MonotoneInOffsetCrossingNearHalf)
{
    const std::vector<double> cs{0.25, 0.5, 0.75, 1.0};
    std::vector<double> b;
    for (double c : cs) b.push_back(exact_bias(20, {BiasEstimator::add, c}));
    for (std::size_t k = 1; k < b.size(); ++k) EXPECT_GT(b[k], b[k - 1]);
    // Sign change lies between c = 1/4 and c = 3/4.
    EXPECT_LT(b[0], 0.0);
    EXPECT_GT(b[2], 0.0);
}

TEST(Bias, MonteCarloAgreesWithSeries)
{
    const auto est = default_bias_estimators();
    const auto grid = default_nu_grid();
    const BiasCurve exact = bias_curve(grid, est, BiasMode::exact_series);
    const BiasCurve mc = bias_curve(grid, est, BiasMode::monte_carlo, 0, 31);
    for (std::size_t k = 0; k < grid.size(); ++k)
        for (std::size_t e = 0; e < est.size(); ++e) {
            EXPECT_LE(mc.std_error[e][k], 1e-3);
            EXPECT_LE(std::abs(mc.bias[e][k] - exact.bias[e][k]), 3.0 * mc.std_error[e][k]) << est[e].name() << " nu " << grid[k];
        }
}

TEST(Bias, RejectsBadInput)
{
    EXPECT_THROW(bias_curve({0.0}, default_bias_estimators(), BiasMode::exact_series), InputError);
    EXPECT_THROW(bias_curve({2.0}, {{BiasEstimator::add, 0.0}}, BiasMode::exact_series), InputError);
}

TEST(Bias, CsvShape)
{
    std::ostringstream os;
    write_bias_csv(os, bias_curve({2, 5}, default_bias_estimators(), BiasMode::exact_series));
    const auto t = csv::parse_string(os.str());
    EXPECT_EQ(t.header, (std::vector<std::string>{"nu", "estimator", "bias", "std_error", "draws"}));
    EXPECT_EQ(t.rows.size(), 10u);
    EXPECT_EQ(t.rows[2][1], "add(0.5)");
}

TEST(RateScan, SlopeOfExactPowerLaw)
{
    const std::vector<double> x{100, 200, 400, 800};
    std::vector<double> y;
    for (double v : x) y.push_back(3.0 / v);
    EXPECT_NEAR(log_log_slope(x, y, 0.0), -1.0, 1e-12);
    EXPECT_EQ(log_log_slope(x, {0, 0, 0, 0}, 1e-12), 0.0);
}

TEST(RateScan, SparseBeta)
{
    for (Index s = 2; s <= 7; ++s) {
        const VectorXd b = sparse_beta(20, s);
        EXPECT_NEAR(b.sum(), 0.0, 1e-14);
        EXPECT_EQ((b.array() != 0.0).count(), s);
    }
    EXPECT_THROW(sparse_beta(20, 1), InputError);
}

TEST(RateScan, SmallScanDecreases)
{
    RateScanConfig cfg;
    cfg.base.p = 20;
    cfg.base.paired = false;
    cfg.n_grid = {40, 160};
    cfg.replicates = 6;
    cfg.bootstrap = 100;
    const RateReport r = rate_scan(cfg);
    ASSERT_EQ(r.points.size(), 2u);
    EXPECT_LT(r.points[1].median, r.points[0].median);
    EXPECT_LT(r.slope, 0.0);
    EXPECT_LE(r.ci_low, r.slope);
    EXPECT_GE(r.ci_high, r.slope);
    // Same configuration, same numbers.
    const RateReport again = rate_scan(cfg);
    EXPECT_EQ(r.points[0].errors, again.points[0].errors);
    EXPECT_EQ(r.ci_low, again.ci_low);
}

TEST(RateScan, PureNoiseSlopeCiContainsZero)
{
    RateScanConfig cfg;
    cfg.base.p = 20;
    cfg.base.paired = false;
    cfg.base.beta_star = VectorXd::Zero(20);
    cfg.n_grid = {40, 80, 160};
    cfg.replicates = 6;
    cfg.bootstrap = 100;
    const RateReport r = rate_scan(cfg);
    EXPECT_LE(r.ci_low, 0.0);
    EXPECT_GE(r.ci_high, 0.0);
}

TEST(RateScan, SparsityDirection)
{
    RateScanConfig cfg;
    cfg.base.p = 30;
    cfg.base.n = 80;
    cfg.base.paired = false;
    cfg.replicates = 8;
    const RateReport r = sparsity_scan(cfg, {2, 7});
    EXPECT_LT(r.points[0].median, r.points[1].median);
}

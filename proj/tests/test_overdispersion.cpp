#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "logeiv/overdispersion.hpp"
#include "logeiv/simulator.hpp"

using namespace logeiv;

namespace {

CountMatrix rows_of(std::initializer_list<std::initializer_list<std::int64_t>> rows)
{
    CountArray a(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
    Index i = 0;
    for (const auto& r : rows) {
        Index j = 0;
        for (auto v : r) a(i, j++) = v;
        ++i;
    }
    return CountMatrix(a);
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

// 200 groups of J = 4 replicates sharing a composition drawn once.
std::vector<AlphaEstimate> calibration_run(double alpha, std::uint64_t seed)
{
    SimScenario sc;
    sc.p = 100;
    sc.n = 2;
    Rng mu_rng = make_rng(seed, {0});
    Rng x_rng = make_rng(seed, {1});
    const VectorXd x = sample_compositions(sc, sample_mu(sc, mu_rng), x_rng).row(0).transpose();
    Rng rng = make_rng(seed, {2});
    std::vector<AlphaEstimate> out;
    for (int g = 0; g < 200; ++g) {
        CountArray a(4, 100);
        for (Index r = 0; r < 4; ++r) a.row(r) = sample_dm_row(sample_depth(sc.depth, rng), x, alpha, rng).transpose();
        out.push_back(estimate_alpha_mom(CountMatrix(a), {{0, 1, 2, 3}, "g"}));
    }
    return out;
}

} // namespace

TEST(AlphaMom, IdenticalReplicatesGiveInfinity)
{
    const auto est = estimate_alpha_mom(rows_of({{10, 20, 30}, {10, 20, 30}}), {{0, 1}, "g"});
    EXPECT_EQ(est.theta_hat, 0.0);
    EXPECT_TRUE(std::isinf(est.alpha_hat));
    EXPECT_EQ(est.replicates, 2);
    EXPECT_EQ(est.total_reads, 120);
}

TEST(AlphaMom, HandComputedExtreme)
{
    // p-hat = (1, 0) and (0, 1): MSB = 5, MSW = 0 per component, theta = 1, clamped.
    const auto est = estimate_alpha_mom(rows_of({{10, 0}, {0, 10}}), {{0, 1}, "g"});
    EXPECT_DOUBLE_EQ(est.theta_raw, 1.0);
    EXPECT_DOUBLE_EQ(est.theta_hat, kMaxTheta);
    EXPECT_NEAR(est.alpha_hat, 1e-12, 1e-15);
}

TEST(AlphaMom, HandComputedModerate)
{
    // Rows (6, 4) and (4, 6), N = 10 each. p-bar = 0.5.
    // MSB_j = 10 * 0.01 * 2 / 1 = 0.2; MSW_j = 10 * 0.24 * 2 / 18 = 0.26667; N_c = 10.
    // theta = 2 (0.2 - 0.26667) / 2 (0.2 + 9 * 0.26667) < 0, so alpha = inf.
    const auto est = estimate_alpha_mom(rows_of({{6, 4}, {4, 6}}), {{0, 1}, "g"});
    EXPECT_NEAR(est.theta_raw, (0.2 - 4.8 / 18.0) / (0.2 + 9.0 * 4.8 / 18.0), 1e-12);
    EXPECT_TRUE(std::isinf(est.alpha_hat));
    // Rows (9, 1), (1, 9): MSB = 10 * 0.16 * 2 = 3.2, MSW = 10 * 0.09 * 2 / 18 = 0.1.
    const auto e2 = estimate_alpha_mom(rows_of({{9, 1}, {1, 9}}), {{0, 1}, "g"});
    const double theta = (3.2 - 0.1) / (3.2 + 9.0 * 0.1);
    EXPECT_NEAR(e2.theta_hat, theta, 1e-12);
    EXPECT_NEAR(e2.alpha_hat, (1.0 - theta) / theta, 1e-10);
}

TEST(AlphaMom, Errors)
{
    const auto W = rows_of({{1, 2}, {3, 4}, {0, 0}});
    try {
        estimate_alpha_mom(W, {{0}, "solo"});
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("insufficient replicates"), std::string::npos);
    }
    EXPECT_THROW(estimate_alpha_mom(W, {{0, 2}, "g"}), InputError);
    EXPECT_THROW(estimate_alpha_mom(W, {{0, 0}, "g"}), InputError);
}

TEST(AlphaMom, ScaleConsistency)
{
    for (std::int64_t k : {1, 2, 7, 100}) {
        const auto same = estimate_alpha_mom(rows_of({{10 * k, 20 * k, 30 * k}, {10 * k, 20 * k, 30 * k}}), {{0, 1}, "g"});
        EXPECT_TRUE(std::isinf(same.alpha_hat));
    }
    for (std::int64_t k : {1, 2, 4, 8}) {
        const auto e = estimate_alpha_mom(rows_of({{9 * k, 1 * k, 5 * k}, {1 * k, 9 * k, 5 * k}}), {{0, 1}, "g"});
        EXPECT_TRUE(std::isfinite(e.alpha_hat));
        EXPECT_GT(e.alpha_hat, 0.0);
    }
}

TEST(AlphaAll, Assignment)
{
    const auto W = rows_of({{1, 2}, {3, 4}, {5, 6}, {7, 8}});
    const auto none = estimate_alpha_all(W, {});
    EXPECT_TRUE(std::all_of(none.begin(), none.end(), [](double a) { return std::isinf(a); }));

    const auto Z = rows_of({{9, 1}, {1, 9}, {5, 6}, {7, 8}});
    std::vector<AlphaEstimate> est;
    const auto a = estimate_alpha_all(Z, {{{0, 1}, "g"}}, &est);
    ASSERT_EQ(est.size(), 1u);
    EXPECT_EQ(a[0], est[0].alpha_hat);
    EXPECT_EQ(a[1], est[0].alpha_hat);
    EXPECT_TRUE(std::isinf(a[2]) && std::isinf(a[3]));
    EXPECT_THROW(estimate_alpha_all(Z, {{{0, 1}, "a"}, {{1, 2}, "b"}}), InputError);
}

TEST(AlphaAll, PairHalves)
{
    const auto g = pair_halves(10);
    ASSERT_EQ(g.size(), 5u);
    for (Index i = 0; i < 5; ++i) EXPECT_EQ(g[static_cast<std::size_t>(i)].member_rows, (std::vector<Index>{i, i + 5}));
    EXPECT_THROW(pair_halves(7), InputError);
}

TEST(Groups, ParseById)
{
    const auto t = csv::parse_string("sample_id,group\nb,x\na,x\nc,y\nd,y\n");
    const auto g = parse_groups(t, {"a", "b", "c", "d"}, "g.csv");
    ASSERT_EQ(g.size(), 2u);
    EXPECT_EQ(g[0].member_rows, (std::vector<Index>{1, 0}));
    EXPECT_EQ(g[1].group_id, "y");
    EXPECT_THROW(parse_groups(csv::parse_string("s,g\nzz,x\n"), {"a"}, "g.csv"), InputError);
}

TEST(AlphaMomCalibration, RecoversAlpha200)
{
    const auto est = calibration_run(200.0, 101);
    std::vector<double> alpha;
    for (const auto& e : est) alpha.push_back(e.alpha_hat);
    const double m = median(alpha);
    EXPECT_GE(m, 100.0);
    EXPECT_LE(m, 400.0);
}

TEST(AlphaMomCalibration, MultinomialThetaNearZero)
{
    const auto est = calibration_run(kInfinity, 102);
    std::vector<double> theta;
    for (const auto& e : est) theta.push_back(e.theta_hat);
    EXPECT_LE(median(theta), 0.005);
}

TEST(AlphaMomCalibration, ThetaDecreasesWithAlpha)
{
    double prev = 2.0;
    for (double a : {200.0, 1000.0, 5000.0}) {
        std::vector<double> theta;
        for (const auto& e : calibration_run(a, 103)) theta.push_back(e.theta_hat);
        const double m = median(theta);
        EXPECT_LT(m, prev) << "alpha " << a;
        prev = m;
    }
}

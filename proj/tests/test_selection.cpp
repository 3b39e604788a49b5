#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "logeiv/benchmark.hpp"
#include "logeiv/selection.hpp"
#include "logeiv/simulator.hpp"

using namespace logeiv;

namespace {

RegressionData vc_data(const SimDataset& ds)
{
    return RegressionData(method_design({BenchMethod::vc, 0.5}, ds), ds.y);
}

RegressionData gaussian_data(Index n, Index p, std::uint64_t seed)
{
    std::mt19937_64 g(seed);
    std::normal_distribution<double> z;
    MatrixXd B(n, p);
    VectorXd y(n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < p; ++j) B(i, j) = z(g);
        y(i) = z(g);
    }
    return RegressionData(B, y);
}

std::size_t true_support_stable(const StabilityReport& r)
{
    std::size_t k = 0;
    for (Index j = 0; j < 7; ++j) k += r.frequency[static_cast<std::size_t>(j)] >= 0.6;
    return k;
}

} // namespace

TEST(CrossValidation, AllNoiseChoosesLargeLambda)
{
    int hits = 0;
    for (std::uint64_t s = 1; s <= 20; ++s) {
        SimScenario sc;
        sc.beta_star = VectorXd::Zero(100);
        sc.sigma = 5.0;
        sc.seed = s;
        const SimDataset ds = simulate(sc);
        const CvResult cv = cv_select_lambda(vc_data(ds), 5, {}, s, &ds.replicate_groups);
        // The grid decreases; the largest quartile is the first quarter of it.
        hits += cv.best_index < cv.grid.size() / 4;
    }
    EXPECT_GE(hits, 14);
}

TEST(CrossValidation, DuplicatedRowsKeepLambda)
{
    const SimDataset ds = simulate([] {
        SimScenario sc;
        sc.n = 40;
        sc.p = 20;
        sc.paired = false;
        sc.seed = 8;
        return sc;
    }());
    const RegressionData data = vc_data(ds);
    const Index n = data.n();
    MatrixXd B2(2 * n, data.p());
    B2 << data.design(), data.design();
    VectorXd y2(2 * n);
    y2 << data.response(), data.response();
    std::vector<ReplicateGroup> twins;
    for (Index i = 0; i < n; ++i) twins.push_back({{i, i + n}, "t" + std::to_string(i)});

    const CvResult a = cv_select_lambda(data, 5, {}, 21);
    const CvResult b = cv_select_lambda(RegressionData(B2, y2), 5, {}, 21, &twins);
    // Equal up to rounding in the stacked sums.
    for (std::size_t l = 0; l < a.grid.size(); ++l) EXPECT_NEAR(a.grid[l], b.grid[l], 1e-12 * a.grid[l]);
    EXPECT_EQ(a.best_index, b.best_index);
    EXPECT_NEAR(a.lambda_star, b.lambda_star, 1e-12 * a.lambda_star);
    for (std::size_t l = 0; l < a.grid.size(); ++l) EXPECT_NEAR(a.cv_mean[l], b.cv_mean[l], 1e-8 * (1.0 + a.cv_mean[l]));
}

TEST(CrossValidation, SimulatedScenarioInteriorLambda)
{
    int interior = 0;
    for (std::uint64_t s = 1; s <= 20; ++s) {
        SimScenario sc;
        sc.seed = s;
        const SimDataset ds = simulate(sc);
        const CvResult cv = cv_select_lambda(vc_data(ds), 5, {}, s, &ds.replicate_groups);
        for (double v : cv.cv_mean) ASSERT_TRUE(std::isfinite(v));
        interior += cv.best_index > 0 && cv.best_index + 1 < cv.grid.size();
    }
    EXPECT_GE(interior, 10);
}

TEST(CrossValidation, FoldsKeepGroupsTogether)
{
    const auto groups = pair_halves(30);
    const auto fold = assign_folds(30, 5, 3, &groups);
    for (Index i = 0; i < 15; ++i) EXPECT_EQ(fold[static_cast<std::size_t>(i)], fold[static_cast<std::size_t>(i + 15)]);
    EXPECT_EQ(fold, assign_folds(30, 5, 3, &groups));
}

TEST(CrossValidation, TinyFoldsRejected)
{
    EXPECT_THROW(assign_folds(5, 5, 1), InputError);
    EXPECT_THROW(assign_folds(10, 1, 1), InputError);
    EXPECT_NO_THROW(assign_folds(10, 5, 1));
    EXPECT_THROW(cv_select_lambda(gaussian_data(4, 5, 1), 5, {}, 1), InputError);
}

TEST(Refit, TwoTaxaClosedForm)
{
    const RegressionData data = gaussian_data(30, 6, 4);
    const VectorXd d = data.design().col(1) - data.design().col(4);
    const double t = d.dot(data.response()) / d.squaredNorm();
    const VectorXd b = refit_on_support(data, {4, 1});
    EXPECT_NEAR(b(1), t, 1e-12);
    EXPECT_NEAR(b(4), -t, 1e-12);
    EXPECT_EQ((b.array() != 0.0).count(), 2);
}

TEST(Refit, FullSupportMatchesTinyLambdaSolver)
{
    const RegressionData data = gaussian_data(40, 8, 5);
    std::vector<Index> all(8);
    for (Index j = 0; j < 8; ++j) all[static_cast<std::size_t>(j)] = j;
    const VectorXd b = refit_on_support(data, all);
    const FitResult f = solve_constrained_lasso(data, 1e-10);
    EXPECT_LE((b - f.beta_hat).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Refit, ProjectedGradientVanishes)
{
    const RegressionData data = gaussian_data(25, 10, 6);
    const std::vector<Index> S{0, 3, 4, 8};
    const VectorXd b = refit_on_support(data, S);
    MatrixXd BS(25, 4);
    VectorXd bS(4);
    for (std::size_t k = 0; k < S.size(); ++k) {
        BS.col(static_cast<Index>(k)) = data.design().col(S[k]);
        bS(static_cast<Index>(k)) = b(S[k]);
    }
    const VectorXd grad = BS.transpose() * (BS * bS - data.response()) / 25.0;
    // Feasible directions on S under 1^T b = 0: remove the mean.
    const VectorXd proj = grad.array() - grad.mean();
    EXPECT_LE(proj.norm(), 1e-8);
    EXPECT_NEAR(bS.sum(), 0.0, 1e-12);
}

TEST(Refit, BadSupports)
{
    const RegressionData data = gaussian_data(10, 5, 7);
    EXPECT_THROW(refit_on_support(data, {}), InputError);
    EXPECT_THROW(refit_on_support(data, {2}), InputError);
    EXPECT_THROW(refit_on_support(data, {1, 1}), InputError);
    EXPECT_THROW(refit_on_support(data, {1, 9}), InputError);
}

TEST(Stability, SingleRunFrequenciesAreBinary)
{
    SimScenario sc;
    sc.seed = 3;
    const SimDataset ds = simulate(sc);
    StabilityConfig cfg;
    cfg.num_bootstrap = 1;
    const auto r = stability_select(vc_data(ds), cfg, 9, &ds.replicate_groups);
    for (double f : r.frequency) EXPECT_TRUE(f == 0.0 || f == 1.0);
    EXPECT_EQ(r.subsample_size, 50);
    EXPECT_EQ(r.lambda_star.size(), 1u);
}

TEST(Stability, ThresholdSemantics)
{
    const std::vector<double> freq{0.0, 0.2, 0.6, 1.0};
    EXPECT_EQ(select_by_threshold(freq, 0.0).size(), 4u);
    EXPECT_EQ(select_by_threshold(freq, 0.6), (std::vector<Index>{2, 3}));
    EXPECT_TRUE(select_by_threshold(freq, 1.0 + 1e-12).empty());

    SimScenario sc;
    sc.seed = 4;
    const SimDataset ds = simulate(sc);
    StabilityConfig cfg;
    cfg.num_bootstrap = 4;
    cfg.threshold = 1e-12;
    const auto r = stability_select(vc_data(ds), cfg, 2, &ds.replicate_groups);
    for (std::size_t j = 0; j < r.frequency.size(); ++j) {
        EXPECT_EQ(std::find(r.selected.begin(), r.selected.end(), static_cast<Index>(j)) != r.selected.end(), r.counts[j] > 0);
        EXPECT_EQ(r.frequency[j] * 4.0, static_cast<double>(r.counts[j]));
    }
}

TEST(Stability, Deterministic)
{
    SimScenario sc;
    sc.seed = 6;
    sc.n = 60;
    const SimDataset ds = simulate(sc);
    StabilityConfig cfg;
    cfg.num_bootstrap = 3;
    const auto a = stability_select(vc_data(ds), cfg, 17, &ds.replicate_groups);
    const auto b = stability_select(vc_data(ds), cfg, 17, &ds.replicate_groups, 2);
    EXPECT_EQ(a.frequency, b.frequency);
    EXPECT_EQ(a.lambda_star, b.lambda_star);
    EXPECT_EQ(a.selected, b.selected);
    EXPECT_TRUE((a.refit.array() == b.refit.array()).all());
}

TEST(Stability, SubsamplesRespectGroups)
{
    const auto groups = pair_halves(20);
    const auto rows = draw_subsample(20, 10, 5, &groups);
    EXPECT_EQ(rows.size(), 10u);
    for (Index r : rows)
        if (r < 10) EXPECT_NE(std::find(rows.begin(), rows.end(), r + 10), rows.end());
    const auto plain = draw_subsample(20, 10, 5, nullptr);
    EXPECT_EQ(std::adjacent_find(plain.begin(), plain.end()), plain.end());
}

// n = 100, p = 100, alpha = 200, ten replicates. VC stabilizes the whole true
// support in the median replicate; zero replacement stabilizes fewer of it.
TEST(Stability, CorrectionBeatsZeroReplacement)
{
    std::vector<double> vc_hits, zr_hits;
    for (std::uint64_t rep = 1; rep <= 10; ++rep) {
        SimScenario sc;
        sc.alpha = 200.0;
        sc.seed = derive_seed(2024, {rep});
        const SimDataset ds = simulate(sc);
        StabilityConfig cfg;
        const auto vc = stability_select(vc_data(ds), cfg, rep, &ds.replicate_groups);
        const auto zr = stability_select(RegressionData(method_design({BenchMethod::zr, 0.5}, ds), ds.y), cfg, rep,
                                         &ds.replicate_groups);
        vc_hits.push_back(static_cast<double>(true_support_stable(vc)));
        zr_hits.push_back(static_cast<double>(true_support_stable(zr)));
    }
    std::string trace = "true taxa at >= 0.6 per replicate (VC/ZR):";
    for (std::size_t r = 0; r < vc_hits.size(); ++r) trace += " " + std::to_string(int(vc_hits[r])) + "/" + std::to_string(int(zr_hits[r]));
    SCOPED_TRACE(trace);
    std::sort(vc_hits.begin(), vc_hits.end());
    std::sort(zr_hits.begin(), zr_hits.end());
    const double vc_med = 0.5 * (vc_hits[4] + vc_hits[5]);
    const double zr_med = 0.5 * (zr_hits[4] + zr_hits[5]);
    EXPECT_EQ(vc_med, 7.0);
    EXPECT_LT(zr_med, vc_med);
}

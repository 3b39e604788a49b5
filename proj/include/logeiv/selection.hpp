#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "data_model.hpp"
#include "errors.hpp"
#include "overdispersion.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "solver.hpp"

namespace logeiv {

struct PathSpec
{
    int num = 50;
    double ratio = 1e-3;
};

struct CvResult
{
    double lambda_star = 0.0;
    std::size_t best_index = 0;
    std::vector<double> grid;
    std::vector<double> cv_mean; // pooled held-out MSE per lambda
    std::vector<double> cv_se;   // standard error of the per-fold MSEs
    std::vector<int> fold_of_row;
    int folds = 0;
    std::uint64_t seed = 0;
};

namespace detail {

// Sampling units: each replicate group is one unit, every ungrouped row is
// its own unit. Units are ordered by their first row.
inline std::vector<std::vector<Index>> sampling_units(Index n, const std::vector<ReplicateGroup>* groups)
{
    std::vector<int> unit_of(static_cast<std::size_t>(n), -1);
    std::vector<std::vector<Index>> members;
    if (groups) {
        for (const auto& g : *groups) {
            const int u = static_cast<int>(members.size());
            members.emplace_back();
            for (Index r : g.member_rows) {
                if (r < 0 || r >= n) throw InputError("group '" + g.group_id + "' refers to row " + std::to_string(r) + " outside the data");
                if (unit_of[static_cast<std::size_t>(r)] != -1) throw InputError("row " + std::to_string(r) + " belongs to more than one group");
                unit_of[static_cast<std::size_t>(r)] = u;
                members.back().push_back(r);
            }
        }
    }
    std::vector<std::vector<Index>> units;
    std::vector<char> emitted(members.size(), 0);
    for (Index i = 0; i < n; ++i) {
        const int u = unit_of[static_cast<std::size_t>(i)];
        if (u < 0) {
            units.push_back({i});
        } else if (!emitted[static_cast<std::size_t>(u)]) {
            emitted[static_cast<std::size_t>(u)] = 1;
            auto m = members[static_cast<std::size_t>(u)];
            std::sort(m.begin(), m.end());
            units.push_back(std::move(m));
        }
    }
    return units;
}

// Fisher-Yates with explicit index draws.
inline std::vector<std::size_t> permutation(std::size_t count, Rng& rng)
{
    std::vector<std::size_t> perm(count);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = count; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

inline std::vector<ReplicateGroup> restrict_groups(const std::vector<ReplicateGroup>& groups, const std::vector<Index>& rows)
{
    std::map<Index, Index> where;
    for (std::size_t k = 0; k < rows.size(); ++k) where[rows[k]] = static_cast<Index>(k);
    std::vector<ReplicateGroup> out;
    for (const auto& g : groups) {
        ReplicateGroup h{{}, g.group_id};
        for (Index r : g.member_rows) {
            auto it = where.find(r);
            if (it != where.end()) h.member_rows.push_back(it->second);
        }
        if (!h.member_rows.empty()) out.push_back(std::move(h));
    }
    return out;
}

} // namespace detail

// Fold labels: units are shuffled with `seed` and dealt round-robin.
inline std::vector<int> assign_folds(Index n, int folds, std::uint64_t seed, const std::vector<ReplicateGroup>* groups = nullptr)
{
    if (folds < 2) throw InputError("cross-validation needs at least two folds");
    const auto units = detail::sampling_units(n, groups);
    Rng rng = make_rng(seed, {0xf01d});
    const auto perm = detail::permutation(units.size(), rng);
    std::vector<int> fold(static_cast<std::size_t>(n), -1);
    std::vector<Index> size(static_cast<std::size_t>(folds), 0);
    for (std::size_t k = 0; k < perm.size(); ++k) {
        const int f = static_cast<int>(k % static_cast<std::size_t>(folds));
        for (Index r : units[perm[k]]) {
            fold[static_cast<std::size_t>(r)] = f;
            ++size[static_cast<std::size_t>(f)];
        }
    }
    for (int f = 0; f < folds; ++f)
        if (size[static_cast<std::size_t>(f)] < 2)
            throw InputError("fold " + std::to_string(f) + " has " + std::to_string(size[static_cast<std::size_t>(f)]) +
                             " rows; every fold needs at least 2");
    return fold;
}

// K-fold CV over a geometric grid anchored at the full-data lambda_max. Ties
// go to the larger lambda.
inline CvResult cv_select_lambda(const RegressionData& data, int folds, const PathSpec& path, std::uint64_t seed,
                                 const std::vector<ReplicateGroup>* groups = nullptr, const SolverConfig& cfg = {})
{
    if (data.n() < folds) throw InputError("n = " + std::to_string(data.n()) + " is smaller than the number of folds");
    CvResult out;
    out.folds = folds;
    out.seed = seed;
    out.fold_of_row = assign_folds(data.n(), folds, seed, groups);
    const double lmax = lambda_max(data);
    // A response orthogonal to every contrast leaves the grid degenerate; any
    // positive scale gives all-zero fits.
    out.grid = lambda_grid(lmax > 0.0 ? lmax : 1.0, path.num, path.ratio);
    const std::size_t L = out.grid.size();
    std::vector<std::vector<double>> sse(static_cast<std::size_t>(folds), std::vector<double>(L, 0.0));
    std::vector<Index> held_count(static_cast<std::size_t>(folds), 0);

    for (int f = 0; f < folds; ++f) {
        std::vector<Index> train, test;
        for (Index i = 0; i < data.n(); ++i) (out.fold_of_row[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
        held_count[static_cast<std::size_t>(f)] = static_cast<Index>(test.size());
        const RegressionData train_data = data.select_rows(train);
        const RegressionData test_data = data.select_rows(test);
        ConstrainedLasso solver(train_data);
        const auto fits = fit_path(solver, out.grid, cfg);
        for (std::size_t l = 0; l < L; ++l) {
            const VectorXd r = test_data.response() - test_data.design() * fits[l].fit.beta_hat;
            sse[static_cast<std::size_t>(f)][l] = r.squaredNorm();
        }
    }
    out.cv_mean.assign(L, 0.0);
    out.cv_se.assign(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        double total = 0.0;
        std::vector<double> per_fold;
        for (int f = 0; f < folds; ++f) {
            total += sse[static_cast<std::size_t>(f)][l];
            per_fold.push_back(sse[static_cast<std::size_t>(f)][l] / static_cast<double>(held_count[static_cast<std::size_t>(f)]));
        }
        out.cv_mean[l] = total / static_cast<double>(data.n());
        const double m = std::accumulate(per_fold.begin(), per_fold.end(), 0.0) / folds;
        double v = 0.0;
        for (double e : per_fold) v += (e - m) * (e - m);
        out.cv_se[l] = std::sqrt(v / (folds - 1) / folds);
    }
    std::size_t best = 0;
    for (std::size_t l = 1; l < L; ++l)
        if (out.cv_mean[l] < out.cv_mean[best]) best = l;
    out.best_index = best;
    out.lambda_star = out.grid[best];
    return out;
}

// Unpenalized least squares on `support` subject to C_S^T b = 0.
inline VectorXd refit_on_support(const RegressionData& data, const std::vector<Index>& support)
{
    if (support.empty()) throw InputError("refit needs a nonempty support");
    std::vector<Index> s = support;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) throw InputError("support has repeated indices");
    if (s.front() < 0 || s.back() >= data.p()) throw InputError("support index out of range");
    auto b = detail::solve_support_qp(data.design(), data.response(), data.constraint(), s,
                                      VectorXd::Zero(static_cast<Index>(s.size())));
    if (!b) throw InputError("the constraint restricted to the support only admits zero (support of size " +
                             std::to_string(s.size()) + ")");
    return *b;
}

struct StabilityConfig
{
    int num_bootstrap = 100;
    Index subsample_size = -1; // -1: floor(n / 2)
    double threshold = 0.6;
    int folds = 5;
    PathSpec path;
    SolverConfig solver;
    double selection_eps = 1e-8;
};

struct StabilityReport
{
    std::vector<double> frequency;
    std::vector<int> counts;
    double threshold = 0.6;
    std::vector<Index> selected;
    int num_bootstrap = 0;
    Index subsample_size = 0;
    int folds = 0;
    std::uint64_t seed = 0;
    std::vector<double> lambda_star; // per run
    VectorXd refit;                  // refit on `selected`, zero when the refit is impossible
    std::vector<int> sign;           // sign of refit coefficient on selected taxa, 0 elsewhere
    std::string subsampling = "without replacement";
};

inline std::vector<Index> select_by_threshold(const std::vector<double>& freq, double threshold)
{
    std::vector<Index> sel;
    for (std::size_t j = 0; j < freq.size(); ++j)
        if (freq[j] >= threshold) sel.push_back(static_cast<Index>(j));
    return sel;
}

// Rows for one stability run: units drawn without replacement until the
// subsample reaches `size` rows (by group when groups are declared).
inline std::vector<Index> draw_subsample(Index n, Index size, std::uint64_t seed, const std::vector<ReplicateGroup>* groups)
{
    const auto units = detail::sampling_units(n, groups);
    Rng rng = make_rng(seed, {0x5ab});
    const auto perm = detail::permutation(units.size(), rng);
    std::vector<Index> rows;
    for (std::size_t k = 0; k < perm.size() && static_cast<Index>(rows.size()) < size; ++k)
        for (Index r : units[perm[k]]) rows.push_back(r);
    std::sort(rows.begin(), rows.end());
    return rows;
}

inline StabilityReport stability_select(const RegressionData& data, const StabilityConfig& cfg, std::uint64_t seed,
                                        const std::vector<ReplicateGroup>* groups = nullptr, unsigned threads = 1)
{
    if (cfg.num_bootstrap < 1) throw InputError("num_bootstrap must be at least 1");
    const Index m = cfg.subsample_size < 0 ? data.n() / 2 : cfg.subsample_size;
    if (m < 1 || m > data.n()) throw InputError("subsample size must lie in [1, n]");
    const Index p = data.p();
    const auto runs = static_cast<std::size_t>(cfg.num_bootstrap);
    std::vector<std::vector<char>> picked(runs);
    std::vector<double> lam(runs, 0.0);

    parallel_for(runs, threads, [&](std::size_t b) {
        const std::uint64_t run_seed = derive_seed(seed, {static_cast<std::uint64_t>(b)});
        const auto rows = draw_subsample(data.n(), m, run_seed, groups);
        const RegressionData sub = data.select_rows(rows);
        std::vector<ReplicateGroup> sub_groups;
        if (groups) sub_groups = detail::restrict_groups(*groups, rows);
        const CvResult cv = cv_select_lambda(sub, cfg.folds, cfg.path, run_seed, groups ? &sub_groups : nullptr, cfg.solver);
        const FitResult fit = solve_constrained_lasso(sub, cv.lambda_star, cfg.solver);
        std::vector<char> hit(static_cast<std::size_t>(p), 0);
        for (Index j = 0; j < p; ++j) hit[static_cast<std::size_t>(j)] = std::abs(fit.beta_hat(j)) > cfg.selection_eps ? 1 : 0;
        picked[b] = std::move(hit);
        lam[b] = cv.lambda_star;
    });

    StabilityReport rep;
    rep.threshold = cfg.threshold;
    rep.num_bootstrap = cfg.num_bootstrap;
    rep.subsample_size = m;
    rep.folds = cfg.folds;
    rep.seed = seed;
    rep.lambda_star = lam;
    rep.counts.assign(static_cast<std::size_t>(p), 0);
    for (const auto& hit : picked)
        for (Index j = 0; j < p; ++j) rep.counts[static_cast<std::size_t>(j)] += hit[static_cast<std::size_t>(j)];
    rep.frequency.resize(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j)
        rep.frequency[static_cast<std::size_t>(j)] = static_cast<double>(rep.counts[static_cast<std::size_t>(j)]) / cfg.num_bootstrap;
    rep.selected = select_by_threshold(rep.frequency, cfg.threshold);
    rep.refit = VectorXd::Zero(p);
    rep.sign.assign(static_cast<std::size_t>(p), 0);
    if (!rep.selected.empty()) {
        try {
            rep.refit = refit_on_support(data, rep.selected);
        } catch (const InputError&) {
            // A single selected taxon under the sum-zero constraint has no free direction.
        }
        for (Index j : rep.selected) rep.sign[static_cast<std::size_t>(j)] = rep.refit(j) > 0.0 ? 1 : (rep.refit(j) < 0.0 ? -1 : 0);
    }
    return rep;
}

} // namespace logeiv

#pragma once

#include <bit>
#include <chrono>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "correction.hpp"
#include "csv.hpp"
#include "overdispersion.hpp"
#include "parallel.hpp"
#include "selection.hpp"
#include "simulator.hpp"
#include "solver.hpp"

namespace logeiv {

enum class BenchMethod
{
    vc,     // log(W + z) with alpha from the method of moments on replicate pairs
    zr,     // log(max(W, c))
    oracle, // log X_true
};

struct MethodSpec
{
    BenchMethod kind = BenchMethod::vc;
    double c = 0.5;

    std::string name() const
    {
        switch (kind) {
        case BenchMethod::vc: return "VC";
        case BenchMethod::zr: return "ZR" + csv::format_double(c);
        case BenchMethod::oracle: return "ORACLE";
        }
        return "?";
    }
};

struct GridSpec
{
    std::vector<Index> n{50, 100};
    std::vector<Index> p{100, 200, 400};
    std::vector<double> alpha{200.0, 1000.0, 5000.0};
    int replicates = 20;
    std::vector<MethodSpec> methods{{BenchMethod::vc, 0.5}, {BenchMethod::zr, 0.5}, {BenchMethod::oracle, 0.5}};
    SimScenario base; // n, p, alpha and seed are overridden per cell
    std::uint64_t seed = 1;
    int folds = 5;
    PathSpec path;
};

struct BenchRow
{
    Index n = 0;
    Index p = 0;
    double alpha = 0.0;
    int replicate = 0;
    std::string method;
    double est_err = 0.0;
    double pred_err = 0.0;
    double lambda_star = 0.0;
    double runtime_ms = 0.0;
    std::string error; // empty on success
};

// Design for one method; VC estimates alpha from the dataset's own replicate groups.
inline MatrixXd method_design(const MethodSpec& m, const SimDataset& ds)
{
    switch (m.kind) {
    case BenchMethod::vc: {
        const auto alpha = estimate_alpha_all(ds.counts, ds.replicate_groups);
        return correct_dirichlet_multinomial(ds.counts, alpha).matrix;
    }
    case BenchMethod::zr: return zero_replace(ds.counts, m.c).matrix;
    case BenchMethod::oracle: return oracle_log_composition(ds.X_true).matrix;
    }
    throw InputError("unknown method");
}

inline std::uint64_t cell_seed(std::uint64_t master, Index n, Index p, double alpha, int replicate)
{
    return derive_seed(master, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(p), std::bit_cast<std::uint64_t>(alpha),
                                static_cast<std::uint64_t>(replicate)});
}

// Simulates one replicate and fits every method on it. Estimation error is
// ||beta_hat - beta*||_2^2; prediction error is the mean squared difference
// between B_test beta_hat and the noiseless (log X_test) beta* on an
// independent draw with the same mu, B_test built by the same method.
inline std::vector<BenchRow> run_replicate(const GridSpec& grid, Index n, Index p, double alpha, int replicate)
{
    SimScenario sc = grid.base;
    sc.n = n;
    sc.p = p;
    sc.alpha = alpha;
    sc.beta_star = grid.base.beta_star.size() == p ? grid.base.beta_star : VectorXd();
    sc.seed = cell_seed(grid.seed, n, p, alpha, replicate);
    std::vector<BenchRow> rows;
    auto blank = [&](const std::string& method) {
        BenchRow r;
        r.n = n;
        r.p = p;
        r.alpha = alpha;
        r.replicate = replicate;
        r.method = method;
        return r;
    };
    std::optional<SimDataset> train_draw, test_draw;
    try {
        train_draw = simulate(sc);
        test_draw = simulate_test_draw(sc, *train_draw);
    } catch (const std::exception& e) {
        for (const auto& m : grid.methods) {
            BenchRow r = blank(m.name());
            r.error = e.what();
            rows.push_back(r);
        }
        return rows;
    }
    const SimDataset& train = *train_draw;
    const SimDataset& test = *test_draw;
    const VectorXd truth_test = test.X_true.array().log().matrix() * train.beta_star;
    const ConstraintSpec cons = scenario_constraint(sc);
    for (const auto& m : grid.methods) {
        BenchRow r = blank(m.name());
        const auto t0 = std::chrono::steady_clock::now();
        try {
            RegressionData data(method_design(m, train), train.y, cons);
            const auto groups = train.replicate_groups;
            const CvResult cv = cv_select_lambda(data, grid.folds, grid.path, derive_seed(sc.seed, {0xc5}),
                                                 groups.empty() ? nullptr : &groups);
            const FitResult fit = solve_constrained_lasso(data, cv.lambda_star);
            const MatrixXd Btest = method_design(m, test);
            r.est_err = (fit.beta_hat - train.beta_star).squaredNorm();
            r.pred_err = (Btest * fit.beta_hat - truth_test).squaredNorm() / static_cast<double>(n);
            r.lambda_star = cv.lambda_star;
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        r.runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back(r);
    }
    return rows;
}

// Every (n, p, alpha) cell and replicate; rows ordered by cell, replicate,
// method regardless of thread count. Failed fits are recorded, not fatal.
inline std::vector<BenchRow> run_scenario_grid(const GridSpec& grid, unsigned threads = 1)
{
    if (grid.replicates < 1) throw InputError("replicates must be at least 1");
    if (grid.methods.empty()) throw InputError("no methods requested");
    struct Task
    {
        Index n, p;
        double alpha;
        int replicate;
    };
    std::vector<Task> tasks;
    for (Index n : grid.n)
        for (Index p : grid.p)
            for (double a : grid.alpha)
                for (int r = 0; r < grid.replicates; ++r) tasks.push_back({n, p, a, r});
    std::vector<std::vector<BenchRow>> out(tasks.size());
    parallel_for(tasks.size(), threads, [&](std::size_t k) {
        const Task& t = tasks[k];
        out[k] = run_replicate(grid, t.n, t.p, t.alpha, t.replicate);
    });
    std::vector<BenchRow> rows;
    for (auto& v : out)
        for (auto& r : v) rows.push_back(std::move(r));
    return rows;
}

inline std::string format_alpha(double a) { return std::isinf(a) ? "inf" : csv::format_double(a); }

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows, bool include_runtime = true)
{
    os << "n,p,alpha,replicate,method,est_err,pred_err,lambda_star" << (include_runtime ? ",runtime_ms" : "") << ",error\n";
    for (const auto& r : rows) {
        os << r.n << ',' << r.p << ',' << format_alpha(r.alpha) << ',' << r.replicate << ',' << csv::quote(r.method) << ','
           << csv::format_double(r.est_err) << ',' << csv::format_double(r.pred_err) << ','
           << csv::format_double(r.lambda_star);
        if (include_runtime) os << ',' << csv::format_double(r.runtime_ms);
        os << ',' << csv::quote(r.error) << '\n';
    }
}

} // namespace logeiv

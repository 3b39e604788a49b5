#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "benchmark.hpp"
#include "correction.hpp"
#include "csv.hpp"
#include "data_model.hpp"
#include "diagnostics.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "overdispersion.hpp"
#include "parallel.hpp"
#include "selection.hpp"
#include "simulator.hpp"
#include "solver.hpp"

namespace logeiv::cli {

namespace fs = std::filesystem;
using io::json;

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode
{
    exit_ok = 0,
    exit_failure = 1,
    exit_usage = 2,
    exit_input = 3,
    exit_numerical = 4,
    exit_budget = 5,
    exit_mismatch = 6,
};

class MismatchError : public Error
{
public:
    using Error::Error;
    const char* category() const noexcept override { return "mismatch"; }
};

inline int exit_code_for(const Error& e)
{
    const std::string c = e.category();
    if (c == "input") return exit_input;
    if (c == "numerical") return exit_numerical;
    if (c == "budget") return exit_budget;
    if (c == "mismatch") return exit_mismatch;
    return exit_failure;
}

// Files produced by a command, kept in memory until the command succeeds.
struct Outputs
{
    std::vector<std::pair<std::string, std::string>> files;
    // Columns left out of a CSV's fingerprint because they are not reproducible.
    std::map<std::string, std::vector<std::string>> volatile_columns;

    void add(std::string name, std::string content) { files.emplace_back(std::move(name), std::move(content)); }
};

// CSV content with the named columns removed, for fingerprinting.
inline std::string strip_columns(const std::string& content, const std::vector<std::string>& drop)
{
    if (drop.empty()) return content;
    std::istringstream in(content);
    std::string line, out;
    std::vector<char> keep;
    bool header = true;
    while (std::getline(in, line)) {
        const auto fields = csv::split_line(line);
        if (header) {
            for (const auto& f : fields) keep.push_back(std::find(drop.begin(), drop.end(), f) == drop.end());
            header = false;
        }
        bool first = true;
        for (std::size_t k = 0; k < fields.size(); ++k) {
            if (k < keep.size() && !keep[k]) continue;
            if (!first) out.push_back(',');
            out += csv::quote(fields[k]);
            first = false;
        }
        out.push_back('\n');
    }
    return out;
}

inline std::string fingerprint(const std::string& content, const std::vector<std::string>& drop = {})
{
    return io::hex64(io::fnv1a(strip_columns(content, drop)));
}

inline void write_file_atomic(const fs::path& path, const std::string& content)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw InputError("cannot write '" + tmp.string() + "'");
        f << content;
        if (!f) throw InputError("failed writing '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

inline std::string utc_now()
{
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline fs::path default_out_dir()
{
    if (const char* env = std::getenv("LOGEIV_OUT_DIR"); env && *env) return env;
    return "logeiv_out";
}

struct Common
{
    std::string out;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

struct RunState
{
    std::ostream& out;
    std::ostream& err;
    Common common;
    std::vector<std::string> canonical_args;
    std::map<std::string, std::string> inputs; // absolute path -> fingerprint
};

inline std::string record_input(RunState& st, const std::string& path)
{
    const std::string abs = fs::absolute(path).lexically_normal().string();
    st.inputs[abs] = fingerprint(io::read_text(abs));
    return abs;
}

// Writes outputs and the manifest into the output directory.
inline void finish(RunState& st, const std::string& command, Outputs& outputs, const json& config)
{
    const fs::path dir = st.common.out.empty() ? default_out_dir() : fs::path(st.common.out);
    fs::create_directories(dir);
    json manifest;
    manifest["tool"] = "logeiv";
    manifest["version"] = kVersion;
    manifest["command"] = command;
    manifest["args"] = st.canonical_args;
    manifest["seed"] = st.common.seed;
    manifest["threads"] = st.common.threads;
    manifest["config"] = config;
    json inputs = json::object();
    for (const auto& [path, fp] : st.inputs) inputs[path] = fp;
    manifest["inputs"] = inputs;
    json outs = json::object();
    json vol = json::object();
    for (const auto& [name, content] : outputs.files) {
        const auto it = outputs.volatile_columns.find(name);
        const std::vector<std::string> drop = it == outputs.volatile_columns.end() ? std::vector<std::string>{} : it->second;
        outs[name] = fingerprint(content, drop);
        if (!drop.empty()) vol[name] = drop;
    }
    manifest["outputs"] = outs;
    manifest["volatile_columns"] = vol;
    manifest["created_utc"] = utc_now();
    for (const auto& [name, content] : outputs.files) write_file_atomic(dir / name, content);
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    st.out << "wrote " << outputs.files.size() << " files and manifest.json to " << dir.string() << "\n";
}

// ---- shared option groups ---------------------------------------------------

inline void add_common(CLI::App* sub, Common& c)
{
    sub->add_option("--out", c.out, "output directory (default: $LOGEIV_OUT_DIR or ./logeiv_out)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--seed", c.seed, "master seed")->capture_default_str();
    sub->add_option("--threads", c.threads, "maximum worker threads")
        ->capture_default_str()
        ->check(CLI::PositiveNumber)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

struct DataOptions
{
    std::string counts, response, groups, constraint;
    std::string correction = "vc";
    double zr_c = 0.5;
    std::string alpha = "inf";
    bool pair_halves = false;

    void add(CLI::App* sub)
    {
        sub->add_option("--counts", counts, "count table CSV (samples x taxa)")->required()->check(CLI::ExistingFile);
        sub->add_option("--response", response, "response CSV (one column, or sample_id,value)")->required()->check(CLI::ExistingFile);
        sub->add_option("--correction", correction, "vc (log(W + z)) or zr (log(max(W, c)))")
            ->capture_default_str()
            ->check(CLI::IsMember({"vc", "zr"}));
        sub->add_option("--zr-c", zr_c, "zero-replacement constant")->capture_default_str();
        sub->add_option("--alpha", alpha, "inf (z = 1/2) or mom (per-group moment estimate)")
            ->capture_default_str()
            ->check(CLI::IsMember({"inf", "mom"}));
        sub->add_option("--groups", groups, "replicate groups CSV (sample_id,group_id)")->check(CLI::ExistingFile);
        sub->add_flag("--pair-halves", pair_halves, "group rows i and i + n/2");
        sub->add_option("--constraint", constraint, "constraint matrix CSV (taxa x r); default 1_p")->check(CLI::ExistingFile);
    }
};

struct PreparedData
{
    CountMatrix counts;
    std::vector<ReplicateGroup> groups;
    std::optional<RegressionData> data;
    CorrectedDesign design;
    std::vector<AlphaEstimate> alpha_estimates;
    std::vector<double> alpha;
    bool intercept = false;
    double y_mean = 0.0;
    VectorXd design_mean;
};

inline PreparedData prepare_data(RunState& st, DataOptions& o)
{
    o.counts = record_input(st, o.counts);
    o.response = record_input(st, o.response);
    PreparedData pd{load_counts(o.counts), {}, std::nullopt, {}, {}, {}, false, 0.0, {}};
    VectorXd y = io::load_response(o.response, pd.counts.sample_ids());
    if (!o.groups.empty() && o.pair_halves) throw InputError("--groups and --pair-halves are mutually exclusive");
    if (!o.groups.empty()) {
        o.groups = record_input(st, o.groups);
        pd.groups = load_groups(o.groups, pd.counts.sample_ids());
    } else if (o.pair_halves) {
        pd.groups = pair_halves(pd.counts.rows());
    }
    if (o.correction == "zr") {
        if (o.alpha == "mom") st.err << "warning: --alpha mom has no effect with --correction zr\n";
        pd.design = zero_replace(pd.counts, o.zr_c);
    } else if (o.alpha == "mom") {
        if (pd.groups.empty()) throw InputError("--alpha mom needs replicate groups (--groups FILE or --pair-halves)");
        pd.alpha = estimate_alpha_all(pd.counts, pd.groups, &pd.alpha_estimates);
        pd.design = correct_dirichlet_multinomial(pd.counts, pd.alpha);
    } else {
        pd.alpha.assign(static_cast<std::size_t>(pd.counts.rows()), kInfinity);
        pd.design = correct_multinomial(pd.counts);
    }
    ConstraintSpec cons = ConstraintSpec::compositional(pd.counts.cols());
    if (!o.constraint.empty()) {
        o.constraint = record_input(st, o.constraint);
        const io::NumericTable ct = io::load_numeric(o.constraint);
        if (ct.values.rows() != pd.counts.cols())
            throw InputError(o.constraint + ": constraint has " + std::to_string(ct.values.rows()) + " rows, expected one per taxon (" +
                             std::to_string(pd.counts.cols()) + ")");
        cons = ConstraintSpec(ct.values);
    }
    MatrixXd B = pd.design.matrix;
    if (!cons.contains_ones()) {
        // Without 1_p in col(C) the per-row depth shift is not annihilated; an
        // intercept absorbs it. Fitting on column-centered data is equivalent.
        st.err << "warning: 1_p is not in the span of the constraint; fitting with an intercept\n";
        pd.intercept = true;
        pd.y_mean = y.mean();
        pd.design_mean = B.colwise().mean().transpose();
        y.array() -= pd.y_mean;
        B.rowwise() -= pd.design_mean.transpose();
    }
    pd.data.emplace(std::move(B), std::move(y), std::move(cons));
    return pd;
}

inline json data_config(const DataOptions& o, const PreparedData& pd)
{
    json j;
    j["counts"] = o.counts;
    j["response"] = o.response;
    j["n"] = pd.counts.rows();
    j["p"] = pd.counts.cols();
    j["correction"] = o.correction;
    j["design"] = pd.design.recipe.describe();
    if (o.correction == "zr") j["zr_c"] = o.zr_c;
    j["alpha_mode"] = o.alpha;
    j["groups"] = o.groups.empty() ? (o.pair_halves ? json("pair-halves") : json(nullptr)) : json(o.groups);
    j["constraint"] = o.constraint.empty() ? json("1_p") : json(o.constraint);
    j["intercept"] = pd.intercept;
    return j;
}

inline json alpha_json(const PreparedData& pd)
{
    json arr = json::array();
    for (const auto& e : pd.alpha_estimates)
        arr.push_back({{"group", e.group_id}, {"alpha_hat", io::number(e.alpha_hat)}, {"theta_hat", e.theta_hat},
                       {"theta_raw", e.theta_raw}, {"replicates", e.replicates}, {"total_reads", e.total_reads}});
    return arr;
}

// ---- fit --------------------------------------------------------------------

struct FitOptions
{
    DataOptions data;
    std::string lambda = "cv";
    int folds = 5;
    int path_num = 50;
    double path_ratio = 1e-3;
    int max_iter = 10000;
    double tol = 1e-7;
    bool row_folds = false;

    void add(CLI::App* sub)
    {
        data.add(sub);
        sub->add_option("--lambda", lambda, "cv, or a nonnegative value")->capture_default_str();
        sub->add_option("--folds", folds, "cross-validation folds")->capture_default_str()->check(CLI::Range(2, 1000));
        sub->add_option("--path-num", path_num, "lambda grid size")->capture_default_str()->check(CLI::Range(2, 100000));
        sub->add_option("--path-ratio", path_ratio, "smallest lambda / lambda_max")->capture_default_str()->check(CLI::Range(1e-12, 0.999999));
        sub->add_option("--max-iter", max_iter, "ADMM iteration limit")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_option("--tol", tol, "relative ADMM tolerance")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_flag("--row-folds", row_folds, "assign CV folds by row even when groups are declared");
    }
};

inline int cmd_fit(RunState& st, FitOptions& o)
{
    PreparedData pd = prepare_data(st, o.data);
    const RegressionData& data = *pd.data;
    SolverConfig cfg;
    cfg.max_iter = o.max_iter;
    cfg.tol_primal = cfg.tol_dual = o.tol;
    json sel;
    Outputs outs;
    double lambda = 0.0;
    if (o.lambda == "cv") {
        const auto* groups = (!pd.groups.empty() && !o.row_folds) ? &pd.groups : nullptr;
        const CvResult cv = cv_select_lambda(data, o.folds, {o.path_num, o.path_ratio}, st.common.seed, groups, cfg);
        lambda = cv.lambda_star;
        sel = io::cv_json(cv);
        sel["mode"] = "cv";
        sel["group_aware_folds"] = groups != nullptr;
        std::ostringstream cvs;
        io::write_cv_csv(cvs, cv);
        outs.add("cv.csv", cvs.str());
    } else {
        try {
            lambda = io::parse_double(o.lambda, "--lambda");
        } catch (const InputError&) {
            throw InputError("--lambda must be 'cv' or a number, got '" + o.lambda + "'");
        }
        if (!(lambda >= 0.0)) throw InputError("--lambda must be nonnegative");
        sel = {{"mode", "value"}};
    }
    const FitResult fit = solve_constrained_lasso(data, lambda, cfg);
    if (!fit.converged) st.err << "warning: solver did not converge within " << o.max_iter << " iterations\n";
    json j;
    j["fit"] = io::fit_json(fit);
    j["lambda_selection"] = sel;
    j["lambda_max"] = lambda_max(data);
    j["constraint_residual"] = constraint_residual(data.constraint(), fit.beta_hat);
    if (pd.intercept) j["intercept"] = pd.y_mean - pd.design_mean.dot(fit.beta_hat);
    j["alpha_estimates"] = alpha_json(pd);
    j["taxa"] = pd.counts.taxon_ids();
    std::ostringstream coef;
    io::write_coefficients_csv(coef, fit.beta_hat, pd.counts.taxon_ids());
    outs.add("fit.json", j.dump(2) + "\n");
    outs.add("coefficients.csv", coef.str());
    json config = data_config(o.data, pd);
    config["lambda"] = o.lambda;
    config["folds"] = o.folds;
    config["path"] = {{"num", o.path_num}, {"ratio", o.path_ratio}};
    config["max_iter"] = o.max_iter;
    config["tol"] = o.tol;
    st.out << "lambda = " << csv::format_double(lambda) << ", support = " << fit.support_size()
           << ", kkt_gap = " << csv::format_double(fit.kkt_gap) << (fit.converged ? "" : " (NOT converged)") << "\n";
    finish(st, "fit", outs, config);
    return exit_ok;
}

// ---- select -----------------------------------------------------------------

struct SelectOptions
{
    DataOptions data;
    int bootstrap = 100;
    double subsample_frac = 0.5;
    double threshold = 0.6;
    int folds = 5;
    int path_num = 50;
    double path_ratio = 1e-3;
    bool row_folds = false;

    void add(CLI::App* sub)
    {
        data.add(sub);
        sub->add_option("--bootstrap", bootstrap, "number of subsamples")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_option("--subsample-frac", subsample_frac, "subsample size as a fraction of n")->capture_default_str()->check(CLI::Range(1e-9, 1.0));
        sub->add_option("--threshold", threshold, "selection frequency threshold")->capture_default_str();
        sub->add_option("--folds", folds, "cross-validation folds per subsample")->capture_default_str()->check(CLI::Range(2, 1000));
        sub->add_option("--path-num", path_num, "lambda grid size")->capture_default_str()->check(CLI::Range(2, 100000));
        sub->add_option("--path-ratio", path_ratio, "smallest lambda / lambda_max")->capture_default_str()->check(CLI::Range(1e-12, 0.999999));
        sub->add_flag("--row-folds", row_folds, "subsample and fold by row even when groups are declared");
    }
};

inline int cmd_select(RunState& st, SelectOptions& o)
{
    PreparedData pd = prepare_data(st, o.data);
    const RegressionData& data = *pd.data;
    StabilityConfig cfg;
    cfg.num_bootstrap = o.bootstrap;
    cfg.subsample_size = static_cast<Index>(std::floor(o.subsample_frac * static_cast<double>(data.n())));
    cfg.threshold = o.threshold;
    cfg.folds = o.folds;
    cfg.path = {o.path_num, o.path_ratio};
    if (o.threshold > 1.0) st.err << "warning: threshold " << o.threshold << " exceeds 1; no variable can be selected\n";
    const auto* groups = (!pd.groups.empty() && !o.row_folds) ? &pd.groups : nullptr;
    const StabilityReport rep = stability_select(data, cfg, st.common.seed, groups, st.common.threads);
    Outputs outs;
    json j = io::stability_json(rep, pd.counts.taxon_ids());
    j["group_aware"] = groups != nullptr;
    j["alpha_estimates"] = alpha_json(pd);
    outs.add("stability.json", j.dump(2) + "\n");
    std::ostringstream cs;
    io::write_stability_csv(cs, rep, pd.counts.taxon_ids());
    outs.add("stability.csv", cs.str());
    json config = data_config(o.data, pd);
    config["bootstrap"] = o.bootstrap;
    config["subsample_frac"] = o.subsample_frac;
    config["subsample_size"] = rep.subsample_size;
    config["threshold"] = o.threshold;
    config["folds"] = o.folds;
    config["path"] = {{"num", o.path_num}, {"ratio", o.path_ratio}};
    st.out << rep.selected.size() << " of " << data.p() << " taxa selected at threshold " << o.threshold << "\n";
    for (Index s : rep.selected)
        st.out << "  " << pd.counts.taxon_ids()[static_cast<std::size_t>(s)] << " freq " << rep.frequency[static_cast<std::size_t>(s)]
               << " sign " << (rep.sign[static_cast<std::size_t>(s)] > 0 ? "+" : (rep.sign[static_cast<std::size_t>(s)] < 0 ? "-" : "0")) << "\n";
    finish(st, "select", outs, config);
    return exit_ok;
}

// ---- simulate ---------------------------------------------------------------

struct ScenarioOptions
{
    std::string scenario;
    std::optional<Index> n, p;
    std::optional<std::string> alpha;
    std::optional<double> sigma, depth_mean, depth_var;
    std::optional<std::string> depth_law;
    bool shared_noise = false, unpaired = false;

    void add(CLI::App* sub, bool with_np = true)
    {
        sub->add_option("--scenario", scenario, "scenario JSON (missing keys keep defaults)")->check(CLI::ExistingFile);
        if (with_np) {
            sub->add_option("--n", n, "samples");
            sub->add_option("--p", p, "taxa");
            sub->add_option("--alpha", alpha, "overdispersion (number or inf)");
        }
        sub->add_option("--sigma", sigma, "noise sd");
        sub->add_option("--depth-law", depth_law, "negative_binomial or poisson")->check(CLI::IsMember({"negative_binomial", "poisson"}));
        sub->add_option("--depth-mean", depth_mean, "mean sequencing depth");
        sub->add_option("--depth-var", depth_var, "depth variance (negative binomial)");
        sub->add_flag("--shared-noise", shared_noise, "eps_i = eps_{i + n/2}");
        sub->add_flag("--unpaired", unpaired, "independent compositions for every row");
    }

    SimScenario build(RunState& st)
    {
        SimScenario sc;
        if (!scenario.empty()) {
            scenario = record_input(st, scenario);
            sc = io::scenario_from_json(io::read_json_file(scenario));
        }
        if (n) sc.n = *n;
        if (p) sc.p = *p;
        if (alpha) sc.alpha = *alpha == "inf" ? kInfinity : io::parse_double(*alpha, "--alpha");
        if (sigma) sc.sigma = *sigma;
        if (depth_law) sc.depth.law = *depth_law == "poisson" ? DepthLaw::poisson : DepthLaw::negative_binomial;
        if (depth_mean) sc.depth.mean = *depth_mean;
        if (depth_var) sc.depth.variance = *depth_var;
        if (shared_noise) sc.shared_noise = true;
        if (unpaired) sc.paired = false;
        return sc;
    }
};

inline int cmd_simulate(RunState& st, ScenarioOptions& o, bool seed_given)
{
    SimScenario sc = o.build(st);
    if (seed_given || o.scenario.empty()) sc.seed = st.common.seed;
    const SimDataset ds = simulate(sc);
    Outputs outs;
    std::ostringstream c, r, x, b, e, g;
    io::write_counts_csv(c, ds.counts);
    outs.add("counts.csv", c.str());
    r << "sample_id,y\n";
    e << "sample_id,eps\n";
    for (Index i = 0; i < ds.y.size(); ++i) {
        r << ds.counts.sample_ids()[static_cast<std::size_t>(i)] << ',' << csv::format_double(ds.y(i)) << '\n';
        e << ds.counts.sample_ids()[static_cast<std::size_t>(i)] << ',' << csv::format_double(ds.eps(i)) << '\n';
    }
    outs.add("response.csv", r.str());
    outs.add("noise.csv", e.str());
    io::write_matrix_csv(x, ds.X_true, ds.counts.sample_ids(), ds.counts.taxon_ids());
    outs.add("compositions.csv", x.str());
    io::write_coefficients_csv(b, ds.beta_star, ds.counts.taxon_ids());
    outs.add("beta_star.csv", b.str());
    if (!ds.replicate_groups.empty()) {
        g << "sample_id,group_id\n";
        for (const auto& grp : ds.replicate_groups)
            for (Index row : grp.member_rows) g << ds.counts.sample_ids()[static_cast<std::size_t>(row)] << ',' << grp.group_id << '\n';
        outs.add("groups.csv", g.str());
    }
    json sj = io::scenario_json(sc);
    sj["beta_star"] = io::vector_json(ds.beta_star);
    outs.add("scenario.json", sj.dump(2) + "\n");
    st.out << "simulated n = " << sc.n << ", p = " << sc.p << ", alpha = " << format_alpha(sc.alpha) << "\n";
    finish(st, "simulate", outs, io::scenario_json(sc));
    return exit_ok;
}

// ---- bench ------------------------------------------------------------------

inline MethodSpec parse_method(const std::string& s)
{
    std::string t = s;
    for (auto& ch : t) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (t == "vc") return {BenchMethod::vc, 0.5};
    if (t == "oracle") return {BenchMethod::oracle, 0.5};
    if (t.rfind("zr", 0) == 0) {
        std::string c = t.substr(2);
        if (!c.empty() && (c[0] == ':' || c[0] == '=')) c = c.substr(1);
        const double v = c.empty() ? 0.5 : io::parse_double(c, "method '" + s + "'");
        if (!(v > 0.0)) throw InputError("zero-replacement constant must be positive in '" + s + "'");
        return {BenchMethod::zr, v};
    }
    throw InputError("unknown method '" + s + "' (use vc, zr, zr:<c> or oracle)");
}

struct BenchOptions
{
    ScenarioOptions scenario;
    std::vector<Index> n{50, 100};
    std::vector<Index> p{100, 200, 400};
    std::vector<std::string> alpha{"200", "1000", "5000"};
    int replicates = 20;
    std::vector<std::string> methods{"vc", "zr:0.5", "oracle"};
    int folds = 5;
    int path_num = 50;
    double path_ratio = 1e-3;

    void add(CLI::App* sub)
    {
        scenario.add(sub, false);
        sub->add_option("--n", n, "sample sizes")->capture_default_str()->delimiter(',');
        sub->add_option("--p", p, "taxa counts")->capture_default_str()->delimiter(',');
        sub->add_option("--alpha", alpha, "overdispersion values (number or inf)")->capture_default_str()->delimiter(',');
        sub->add_option("--replicates", replicates, "replicates per cell")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_option("--methods", methods, "vc, zr:<c>, oracle")->capture_default_str()->delimiter(',');
        sub->add_option("--folds", folds, "cross-validation folds")->capture_default_str()->check(CLI::Range(2, 1000));
        sub->add_option("--path-num", path_num, "lambda grid size")->capture_default_str()->check(CLI::Range(2, 100000));
        sub->add_option("--path-ratio", path_ratio, "smallest lambda / lambda_max")->capture_default_str()->check(CLI::Range(1e-12, 0.999999));
    }
};

inline void write_bench_summary(std::ostream& os, const std::vector<BenchRow>& rows)
{
    struct Acc
    {
        std::vector<double> est, pred;
        int failed = 0;
    };
    std::map<std::tuple<Index, Index, double, std::string>, Acc> acc;
    std::vector<std::tuple<Index, Index, double, std::string>> order;
    for (const auto& r : rows) {
        const auto key = std::make_tuple(r.n, r.p, r.alpha, r.method);
        if (!acc.count(key)) order.push_back(key);
        auto& a = acc[key];
        if (!r.error.empty()) {
            ++a.failed;
            continue;
        }
        a.est.push_back(r.est_err);
        a.pred.push_back(r.pred_err);
    }
    os << "n,p,alpha,method,median_est_err,median_pred_err,replicates,failed\n";
    for (const auto& key : order) {
        const auto& a = acc[key];
        os << std::get<0>(key) << ',' << std::get<1>(key) << ',' << format_alpha(std::get<2>(key)) << ',' << csv::quote(std::get<3>(key)) << ','
           << (a.est.empty() ? std::string("nan") : csv::format_double(median_of(a.est))) << ','
           << (a.pred.empty() ? std::string("nan") : csv::format_double(median_of(a.pred))) << ',' << a.est.size() << ',' << a.failed << '\n';
    }
}

inline int cmd_bench(RunState& st, BenchOptions& o)
{
    GridSpec grid;
    grid.base = o.scenario.build(st);
    grid.n = o.n;
    grid.p = o.p;
    grid.alpha.clear();
    for (const auto& a : o.alpha) grid.alpha.push_back(a == "inf" ? kInfinity : io::parse_double(a, "--alpha"));
    grid.replicates = o.replicates;
    grid.methods.clear();
    for (const auto& m : o.methods) grid.methods.push_back(parse_method(m));
    grid.seed = st.common.seed;
    grid.folds = o.folds;
    grid.path = {o.path_num, o.path_ratio};
    const auto rows = run_scenario_grid(grid, st.common.threads);
    Outputs outs;
    std::ostringstream b, s;
    write_bench_csv(b, rows);
    outs.add("bench.csv", b.str());
    outs.volatile_columns["bench.csv"] = {"runtime_ms"};
    write_bench_summary(s, rows);
    outs.add("summary.csv", s.str());
    std::size_t failed = 0;
    for (const auto& r : rows) failed += r.error.empty() ? 0 : 1;
    if (failed) st.err << "warning: " << failed << " of " << rows.size() << " fits failed; see the error column\n";
    json config;
    config["base_scenario"] = io::scenario_json(grid.base);
    config["n"] = o.n;
    config["p"] = o.p;
    config["alpha"] = o.alpha;
    config["replicates"] = o.replicates;
    config["methods"] = o.methods;
    config["folds"] = o.folds;
    config["path"] = {{"num", o.path_num}, {"ratio", o.path_ratio}};
    config["prediction_error"] =
        "mean over an independent test draw (same mu) of (B_test beta_hat - log(X_test) beta*)^2, B_test built by the same method";
    st.out << rows.size() << " result rows\n" << s.str();
    finish(st, "bench", outs, config);
    return exit_ok;
}

// ---- bias -------------------------------------------------------------------

struct BiasOptions
{
    std::vector<double> nu = default_nu_grid();
    std::string mode = "exact";
    long long draws = 0;
    std::vector<std::string> estimators{"zr:0.5", "add:0.25", "add:0.5", "add:0.75", "add:1"};
    bool plot = false;

    void add(CLI::App* sub)
    {
        sub->add_option("--nu", nu, "Poisson means")->capture_default_str()->delimiter(',');
        sub->add_option("--mode", mode, "exact (truncated series) or mc (Monte Carlo)")->capture_default_str()->check(CLI::IsMember({"exact", "mc"}));
        sub->add_option("--draws", draws, "Monte Carlo draws per point (0: sized for SE <= 1e-3)")->capture_default_str();
        sub->add_option("--estimators", estimators, "zr:<c> for log(max(W, c)), add:<c> for log(W + c)")->capture_default_str()->delimiter(',');
        sub->add_flag("--plot", plot, "print a text table to stdout");
    }
};

inline BiasEstimator parse_bias_estimator(const std::string& s)
{
    const auto colon = s.find(':');
    const std::string kind = s.substr(0, colon);
    const double c = colon == std::string::npos ? 0.5 : io::parse_double(s.substr(colon + 1), "estimator '" + s + "'");
    if (kind == "zr") return {BiasEstimator::zero_replace, c};
    if (kind == "add") return {BiasEstimator::add, c};
    throw InputError("unknown estimator '" + s + "' (use zr:<c> or add:<c>)");
}

inline int cmd_bias(RunState& st, BiasOptions& o)
{
    std::vector<BiasEstimator> est;
    for (const auto& e : o.estimators) est.push_back(parse_bias_estimator(e));
    const BiasCurve curve = bias_curve(o.nu, est, o.mode == "exact" ? BiasMode::exact_series : BiasMode::monte_carlo, o.draws, st.common.seed);
    Outputs outs;
    std::ostringstream b;
    write_bias_csv(b, curve);
    outs.add("bias.csv", b.str());
    if (o.plot) {
        st.out << std::setw(8) << "nu";
        for (const auto& e : est) st.out << std::setw(18) << e.name();
        st.out << "\n";
        for (std::size_t k = 0; k < o.nu.size(); ++k) {
            st.out << std::setw(8) << o.nu[k];
            for (std::size_t e = 0; e < est.size(); ++e) st.out << std::setw(18) << std::setprecision(6) << curve.bias[e][k];
            st.out << "\n";
        }
    }
    json config = {{"nu", o.nu}, {"mode", o.mode}, {"draws", o.draws}, {"estimators", o.estimators}};
    finish(st, "bias", outs, config);
    return exit_ok;
}

// ---- rip --------------------------------------------------------------------

struct RipOptionsCli
{
    std::string matrix, counts;
    Index s = 2;
    std::string method = "exhaustive";
    long long supports = 10000;
    double budget = 1e6;
    bool raw = false;

    void add(CLI::App* sub)
    {
        sub->add_option("--matrix", matrix, "numeric design CSV")->check(CLI::ExistingFile);
        sub->add_option("--counts", counts, "count table CSV; design log(W + 1/2)")->check(CLI::ExistingFile);
        sub->add_option("--s", s, "sparsity level")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_option("--method", method, "exhaustive or randomized")->capture_default_str()->check(CLI::IsMember({"exhaustive", "randomized"}));
        sub->add_option("--supports", supports, "random supports (randomized)")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_option("--budget", budget, "maximum supports for exhaustive")->capture_default_str();
        sub->add_flag("--raw", raw, "use the matrix as given instead of centering by (I - P_C) with C = 1_p");
    }
};

inline int cmd_rip(RunState& st, RipOptionsCli& o)
{
    if (o.matrix.empty() == o.counts.empty()) throw InputError("give exactly one of --matrix or --counts");
    MatrixXd M;
    if (!o.matrix.empty()) {
        o.matrix = record_input(st, o.matrix);
        M = io::load_numeric(o.matrix).values;
    } else {
        o.counts = record_input(st, o.counts);
        M = correct_multinomial(load_counts(o.counts)).matrix;
    }
    RipOptions opt;
    opt.method = o.method == "exhaustive" ? RipMethod::exhaustive : RipMethod::randomized;
    opt.num_supports = o.supports;
    opt.seed = st.common.seed;
    opt.budget = o.budget;
    opt.threads = st.common.threads;
    const RipReport rep = o.raw ? rip_constant(M, o.s, opt) : rip_constant_centered(M, ConstraintSpec::compositional(M.cols()), o.s, opt);
    json j = io::rip_json(rep);
    j["centered"] = !o.raw;
    if (o.raw) j["note"] = "raw matrix; the estimator's condition concerns the centered design";
    Outputs outs;
    outs.add("rip.json", j.dump(2) + "\n");
    st.out << "delta_" << rep.s << " = " << csv::format_double(rep.delta_s) << (rep.lower_bound ? " (lower bound)" : "") << "\n";
    json config = {{"s", o.s}, {"method", o.method}, {"supports", o.supports}, {"budget", o.budget}, {"raw", o.raw}};
    finish(st, "rip", outs, config);
    return exit_ok;
}

// ---- rate -------------------------------------------------------------------

struct RateOptions
{
    ScenarioOptions scenario;
    std::string scan = "n";
    std::vector<Index> n_grid{100, 200, 400, 800};
    std::vector<double> factors{1, 4, 16};
    std::vector<Index> s_values{2, 7};
    int replicates = 30;
    std::string method = "oracle";
    int bootstrap = 1000;

    void add(CLI::App* sub)
    {
        scenario.add(sub, true);
        sub->add_option("--scan", scan, "n, depth or s")->capture_default_str()->check(CLI::IsMember({"n", "depth", "s"}));
        sub->add_option("--n-grid", n_grid, "sample sizes (n scan)")->capture_default_str()->delimiter(',');
        sub->add_option("--factors", factors, "depth multipliers (depth scan)")->capture_default_str()->delimiter(',');
        sub->add_option("--s-values", s_values, "sparsity levels (s scan)")->capture_default_str()->delimiter(',');
        sub->add_option("--replicates", replicates, "replicates per point")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_option("--method", method, "vc, zr:<c> or oracle")->capture_default_str();
        sub->add_option("--bootstrap", bootstrap, "bootstrap resamples for the slope CI")->capture_default_str();
    }
};

inline int cmd_rate(RunState& st, RateOptions& o)
{
    RateScanConfig cfg;
    cfg.base = o.scenario.build(st);
    cfg.n_grid = o.n_grid;
    cfg.replicates = o.replicates;
    cfg.method = parse_method(o.method);
    cfg.seed = st.common.seed;
    cfg.bootstrap = o.bootstrap;
    cfg.threads = st.common.threads;
    RateReport rep;
    std::string x;
    if (o.scan == "n") {
        rep = rate_scan(cfg);
        x = "n";
    } else if (o.scan == "depth") {
        rep = depth_scan(cfg, o.factors);
        x = "depth_factor";
    } else {
        rep = sparsity_scan(cfg, o.s_values);
        x = "s";
    }
    Outputs outs;
    std::ostringstream c;
    write_rate_csv(c, rep, x);
    outs.add("rate.csv", c.str());
    outs.add("rate.json", io::rate_json(rep, x).dump(2) + "\n");
    for (const auto& pt : rep.points) st.out << x << " = " << pt.x << ": median error " << csv::format_double(pt.median) << "\n";
    st.out << "log-log slope " << rep.slope << " [" << rep.ci_low << ", " << rep.ci_high << "]\n";
    json config = {{"scan", o.scan}, {"base_scenario", io::scenario_json(cfg.base)}, {"replicates", o.replicates}, {"method", o.method},
                   {"bootstrap", o.bootstrap}};
    finish(st, "rate", outs, config);
    return exit_ok;
}

// ---- dispatcher -------------------------------------------------------------

// Every explicitly given option of the subcommand, path options made
// absolute, --out left out so a replay can choose its own directory.
inline std::vector<std::string> canonical_args(const CLI::App* sub)
{
    static const std::set<std::string> paths{"--counts", "--response", "--groups", "--constraint", "--scenario", "--matrix"};
    std::vector<std::string> args{sub->get_name()};
    for (const CLI::Option* opt : sub->get_options()) {
        if (opt->count() == 0) continue;
        const std::string name = opt->get_name();
        if (name == "--out" || name == "--help" || name.empty()) continue;
        if (opt->get_expected_max() == 0) {
            args.push_back(name);
            continue;
        }
        for (const auto& r : opt->results()) {
            args.push_back(name);
            args.push_back(paths.count(name) ? fs::absolute(r).lexically_normal().string() : r);
        }
    }
    return args;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

inline int cmd_replay(const std::string& manifest_path, const std::string& out_dir, bool check, unsigned threads_override,
                      std::ostream& out, std::ostream& err)
{
    const json m = io::read_json_file(manifest_path);
    if (!m.contains("args") || !m.contains("outputs")) throw InputError(manifest_path + ": not a logeiv manifest");
    if (m.value("version", std::string()) != kVersion)
        err << "warning: manifest written by version " << m.value("version", std::string("?")) << ", replaying with " << kVersion << "\n";
    for (const auto& [path, fp] : m["inputs"].items()) {
        std::string now;
        try {
            now = fingerprint(io::read_text(path));
        } catch (const InputError&) {
            throw InputError("input '" + path + "' recorded in the manifest is missing");
        }
        if (now != fp.get<std::string>()) throw InputError("input '" + path + "' changed since the recorded run");
    }
    const fs::path dir = out_dir.empty() ? fs::path(manifest_path).parent_path() / "replay" : fs::path(out_dir);
    std::vector<std::string> args = m["args"].get<std::vector<std::string>>();
    args.push_back("--out");
    args.push_back(dir.string());
    if (threads_override > 0) {
        args.push_back("--threads");
        args.push_back(std::to_string(threads_override));
    }
    const int rc = run(args, out, err);
    if (rc != exit_ok || !check) return rc;
    const json vol = m.value("volatile_columns", json::object());
    std::size_t compared = 0;
    for (const auto& [name, fp] : m["outputs"].items()) {
        const std::vector<std::string> drop = vol.contains(name) ? vol[name].get<std::vector<std::string>>() : std::vector<std::string>{};
        const std::string now = fingerprint(io::read_text((dir / name).string()), drop);
        if (now != fp.get<std::string>()) throw MismatchError("replayed output '" + name + "' differs from the recorded run");
        ++compared;
    }
    out << "replay ok: " << compared << " outputs match the manifest\n";
    return exit_ok;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"logeiv: variable-correction regularized regression on count covariates"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Common common;
    common.threads = default_threads();
    FitOptions fit;
    SelectOptions select;
    ScenarioOptions sim;
    BenchOptions bench;
    BiasOptions bias;
    RipOptionsCli rip;
    RateOptions rate;
    std::string manifest, replay_out;
    bool no_check = false;
    unsigned replay_threads = 0;

    auto* s_fit = app.add_subcommand("fit", "fit the constrained lasso on a count table");
    fit.add(s_fit);
    add_common(s_fit, common);
    auto* s_select = app.add_subcommand("select", "stability selection with refitted signs");
    select.add(s_select);
    add_common(s_select, common);
    auto* s_sim = app.add_subcommand("simulate", "draw a synthetic dataset");
    sim.add(s_sim);
    add_common(s_sim, common);
    auto* s_bench = app.add_subcommand("bench", "scenario grid: VC vs zero replacement vs oracle");
    bench.add(s_bench);
    add_common(s_bench, common);
    auto* s_bias = app.add_subcommand("bias", "bias of log-count estimators under Poisson counts");
    bias.add(s_bias);
    add_common(s_bias, common);
    auto* s_rip = app.add_subcommand("rip", "restricted isometry constant of a design");
    rip.add(s_rip);
    add_common(s_rip, common);
    auto* s_rate = app.add_subcommand("rate", "error scaling in n, depth or sparsity");
    rate.add(s_rate);
    add_common(s_rate, common);
    auto* s_replay = app.add_subcommand("replay", "rerun a command from its manifest and compare outputs");
    s_replay->add_option("manifest", manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
    s_replay->add_option("--out", replay_out, "directory for the replayed outputs (default: <manifest dir>/replay)");
    s_replay->add_flag("--no-check", no_check, "rerun without comparing fingerprints");
    s_replay->add_option("--threads", replay_threads, "override the recorded thread count");

    std::vector<const char*> argv{"logeiv"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error[usage]: " << e.what() << "\n";
        return exit_usage;
    }

    try {
        for (CLI::App* sub : app.get_subcommands()) {
            RunState st{out, err, common, {}, {}};
            if (sub != s_replay) st.canonical_args = canonical_args(sub);
            if (sub == s_fit) return cmd_fit(st, fit);
            if (sub == s_select) return cmd_select(st, select);
            if (sub == s_sim) return cmd_simulate(st, sim, s_sim->get_option("--seed")->count() > 0);
            if (sub == s_bench) return cmd_bench(st, bench);
            if (sub == s_bias) return cmd_bias(st, bias);
            if (sub == s_rip) return cmd_rip(st, rip);
            if (sub == s_rate) return cmd_rate(st, rate);
            if (sub == s_replay) return cmd_replay(manifest, replay_out, !no_check, replay_threads, out, err);
        }
    } catch (const Error& e) {
        err << "error[" << e.category() << "]: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const fs::filesystem_error& e) {
        err << "error[io]: " << e.what() << "\n";
        return exit_failure;
    } catch (const std::exception& e) {
        err << "error[internal]: " << e.what() << "\n";
        return exit_failure;
    }
    return exit_usage;
}

inline int main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

} // namespace logeiv::cli

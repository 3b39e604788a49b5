#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "correction.hpp"
#include "csv.hpp"
#include "data_model.hpp"
#include "diagnostics.hpp"
#include "errors.hpp"
#include "selection.hpp"
#include "simulator.hpp"
#include "solver.hpp"

namespace logeiv::io {

using json = nlohmann::ordered_json;

// JSON has no infinities; they are written as the strings "inf" / "-inf".
inline json number(double v)
{
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

inline double to_double(const json& j, const std::string& what)
{
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "+inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
        if (s == "-inf" || s == "-Infinity") return -std::numeric_limits<double>::infinity();
    }
    throw InputError(what + ": expected a number or \"inf\"");
}

inline json vector_json(const VectorXd& v)
{
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
    return a;
}

inline VectorXd vector_from_json(const json& j, const std::string& what)
{
    if (!j.is_array()) throw InputError(what + ": expected an array");
    VectorXd v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = to_double(j[i], what);
    return v;
}

inline json matrix_json(const MatrixXd& m)
{
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
    return rows;
}

inline MatrixXd matrix_from_json(const json& j, const std::string& what)
{
    if (!j.is_array() || j.empty()) throw InputError(what + ": expected a nonempty array of rows");
    const std::size_t cols = j[0].size();
    MatrixXd m(static_cast<Index>(j.size()), static_cast<Index>(cols));
    for (std::size_t i = 0; i < j.size(); ++i) {
        const VectorXd r = vector_from_json(j[i], what);
        if (static_cast<std::size_t>(r.size()) != cols) throw InputError(what + ": ragged rows");
        m.row(static_cast<Index>(i)) = r.transpose();
    }
    return m;
}

inline double parse_double(const std::string& cell, const std::string& where)
{
    const char* b = cell.c_str();
    char* e = nullptr;
    const double v = std::strtod(b, &e);
    if (cell.empty() || e != b + cell.size()) throw InputError(where + ": '" + cell + "' is not a number");
    return v;
}

inline bool is_number(const std::string& cell)
{
    if (cell.empty()) return false;
    const char* b = cell.c_str();
    char* e = nullptr;
    std::strtod(b, &e);
    return e == b + cell.size();
}

// ---- scenario files ----------------------------------------------------------

inline json scenario_json(const SimScenario& sc)
{
    json blocks = json::array();
    for (const auto& b : sc.composition.blocks) blocks.push_back({{"count", b.count}, {"lo", b.lo}, {"hi", b.hi}});
    json j;
    j["n"] = sc.n;
    j["p"] = sc.p;
    j["depth"] = {{"law", to_string(sc.depth.law)}, {"mean", sc.depth.mean}, {"variance", sc.depth.variance}};
    j["composition"] = {{"within_sd", sc.composition.within_sd}, {"blocks", blocks}};
    j["alpha"] = number(sc.alpha);
    j["beta_star"] = sc.beta_star.size() ? vector_json(sc.beta_star) : json(nullptr);
    j["sigma"] = sc.sigma;
    j["paired"] = sc.paired;
    j["shared_noise"] = sc.shared_noise;
    j["seed"] = sc.seed;
    j["constraint"] = sc.constraint ? matrix_json(*sc.constraint) : json(nullptr);
    return j;
}

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where)
{
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw InputError(where + ": unknown key '" + it.key() + "'");
}

// Missing keys keep their defaults.
inline SimScenario scenario_from_json(const json& j, SimScenario sc = {})
{
    if (!j.is_object()) throw InputError("scenario: expected a JSON object");
    reject_unknown(j, {"n", "p", "depth", "composition", "alpha", "beta_star", "sigma", "paired", "shared_noise", "seed", "constraint"},
                   "scenario");
    try {
        if (j.contains("n")) sc.n = j["n"].get<Index>();
        if (j.contains("p")) sc.p = j["p"].get<Index>();
        if (j.contains("depth")) {
            const auto& d = j["depth"];
            reject_unknown(d, {"law", "mean", "variance"}, "scenario.depth");
            if (d.contains("law")) {
                const auto law = d["law"].get<std::string>();
                if (law == "poisson") sc.depth.law = DepthLaw::poisson;
                else if (law == "negative_binomial" || law == "nb") sc.depth.law = DepthLaw::negative_binomial;
                else throw InputError("scenario.depth.law: unknown law '" + law + "'");
            }
            if (d.contains("mean")) sc.depth.mean = to_double(d["mean"], "scenario.depth.mean");
            if (d.contains("variance")) sc.depth.variance = to_double(d["variance"], "scenario.depth.variance");
        }
        if (j.contains("composition")) {
            const auto& c = j["composition"];
            reject_unknown(c, {"within_sd", "blocks"}, "scenario.composition");
            if (c.contains("within_sd")) sc.composition.within_sd = to_double(c["within_sd"], "scenario.composition.within_sd");
            if (c.contains("blocks")) {
                sc.composition.blocks.clear();
                for (const auto& b : c["blocks"])
                    sc.composition.blocks.push_back({b.at("count").get<Index>(), to_double(b.at("lo"), "block.lo"),
                                                     to_double(b.at("hi"), "block.hi")});
            }
        }
        if (j.contains("alpha")) sc.alpha = to_double(j["alpha"], "scenario.alpha");
        if (j.contains("beta_star")) sc.beta_star = j["beta_star"].is_null() ? VectorXd() : vector_from_json(j["beta_star"], "scenario.beta_star");
        if (j.contains("sigma")) sc.sigma = to_double(j["sigma"], "scenario.sigma");
        if (j.contains("paired")) sc.paired = j["paired"].get<bool>();
        if (j.contains("shared_noise")) sc.shared_noise = j["shared_noise"].get<bool>();
        if (j.contains("seed")) sc.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("constraint")) {
            if (j["constraint"].is_null()) sc.constraint.reset();
            else sc.constraint = matrix_from_json(j["constraint"], "scenario.constraint");
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("scenario: ") + e.what());
    }
    return sc;
}

inline json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError(path + ": " + e.what());
    }
}

// ---- tables ------------------------------------------------------------------

inline void write_counts_csv(std::ostream& os, const CountMatrix& W)
{
    os << "sample_id";
    for (const auto& t : W.taxon_ids()) os << ',' << csv::quote(t);
    os << '\n';
    for (Index i = 0; i < W.rows(); ++i) {
        os << csv::quote(W.sample_ids()[static_cast<std::size_t>(i)]);
        for (Index j = 0; j < W.cols(); ++j) os << ',' << W(i, j);
        os << '\n';
    }
}

inline void write_matrix_csv(std::ostream& os, const MatrixXd& m, const std::vector<std::string>& row_ids,
                             const std::vector<std::string>& col_ids)
{
    os << "sample_id";
    for (const auto& c : col_ids) os << ',' << csv::quote(c);
    os << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
        os << csv::quote(row_ids[static_cast<std::size_t>(i)]);
        for (Index j = 0; j < m.cols(); ++j) os << ',' << csv::format_double(m(i, j));
        os << '\n';
    }
}

struct NumericTable
{
    MatrixXd values;
    std::vector<std::string> row_ids;
    std::vector<std::string> col_ids;
};

// Numeric CSV with a header row. A leading column is treated as row ids when
// its header is an id name or any of its cells is not a number.
inline NumericTable parse_numeric(const csv::Table& t, const std::string& source)
{
    if (t.rows.empty()) throw InputError(source + ": no data rows");
    bool ids = detail::looks_like_id_header(t.header[0]);
    for (std::size_t i = 0; i < t.rows.size() && !ids; ++i) ids = !is_number(t.rows[i][0]);
    const std::size_t off = ids ? 1 : 0;
    if (t.header.size() <= off) throw InputError(source + ": no value columns");
    NumericTable out;
    out.values.resize(static_cast<Index>(t.rows.size()), static_cast<Index>(t.header.size() - off));
    out.col_ids.assign(t.header.begin() + static_cast<std::ptrdiff_t>(off), t.header.end());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        out.row_ids.push_back(ids ? t.rows[i][0] : "r" + std::to_string(i + 1));
        for (std::size_t j = off; j < t.header.size(); ++j)
            out.values(static_cast<Index>(i), static_cast<Index>(j - off)) =
                parse_double(t.rows[i][j], source + " line " + std::to_string(t.line_numbers[i]));
    }
    return out;
}

inline NumericTable load_numeric(const std::string& path) { return parse_numeric(csv::read_file(path), path); }

// Response file: one value column (matched by position) or (sample_id, value)
// (matched by id against the count table).
inline VectorXd parse_response(const csv::Table& t, const std::vector<std::string>& sample_ids, const std::string& source)
{
    const NumericTable nt = parse_numeric(t, source);
    if (nt.values.cols() != 1) throw InputError(source + ": expected a single response column");
    const auto n = static_cast<Index>(sample_ids.size());
    if (nt.values.rows() != n)
        throw InputError(source + ": response has " + std::to_string(nt.values.rows()) + " rows but the count table has " +
                         std::to_string(n) + " samples");
    const bool by_id = t.header.size() == 2;
    if (!by_id) return nt.values.col(0);
    std::map<std::string, Index> at;
    for (Index i = 0; i < n; ++i) at[nt.row_ids[static_cast<std::size_t>(i)]] = i;
    VectorXd y(n);
    for (Index i = 0; i < n; ++i) {
        auto it = at.find(sample_ids[static_cast<std::size_t>(i)]);
        if (it == at.end()) throw InputError(source + ": no response for sample '" + sample_ids[static_cast<std::size_t>(i)] + "'");
        y(i) = nt.values(it->second, 0);
    }
    return y;
}

inline VectorXd load_response(const std::string& path, const std::vector<std::string>& sample_ids)
{
    return parse_response(csv::read_file(path), sample_ids, path);
}

// ---- results -----------------------------------------------------------------

inline json fit_json(const FitResult& f)
{
    json j;
    j["lambda"] = f.lambda;
    j["beta_hat"] = vector_json(f.beta_hat);
    j["support_size"] = f.support_size();
    j["iterations"] = f.iterations;
    j["primal_residual"] = f.primal_residual;
    j["dual_residual"] = f.dual_residual;
    j["kkt_gap"] = f.kkt_gap;
    j["objective"] = f.objective;
    j["converged"] = f.converged;
    j["polished"] = f.polished;
    j["rho"] = f.rho;
    return j;
}

inline void write_coefficients_csv(std::ostream& os, const VectorXd& beta, const std::vector<std::string>& taxa)
{
    os << "taxon,coefficient\n";
    for (Index j = 0; j < beta.size(); ++j) os << csv::quote(taxa[static_cast<std::size_t>(j)]) << ',' << csv::format_double(beta(j)) << '\n';
}

inline void write_cv_csv(std::ostream& os, const CvResult& cv)
{
    os << "lambda,cv_mse,cv_se\n";
    for (std::size_t l = 0; l < cv.grid.size(); ++l)
        os << csv::format_double(cv.grid[l]) << ',' << csv::format_double(cv.cv_mean[l]) << ',' << csv::format_double(cv.cv_se[l]) << '\n';
}

inline json cv_json(const CvResult& cv)
{
    json j;
    j["lambda_star"] = cv.lambda_star;
    j["best_index"] = cv.best_index;
    j["folds"] = cv.folds;
    j["seed"] = cv.seed;
    j["fold_of_row"] = cv.fold_of_row;
    return j;
}

inline json stability_json(const StabilityReport& r, const std::vector<std::string>& taxa)
{
    json j;
    j["num_bootstrap"] = r.num_bootstrap;
    j["subsample_size"] = r.subsample_size;
    j["subsampling"] = r.subsampling;
    j["threshold"] = number(r.threshold);
    j["folds"] = r.folds;
    j["seed"] = r.seed;
    j["selection_rule"] = "|beta_j| > 1e-8 at the cross-validated lambda";
    json freq = json::object();
    for (std::size_t k = 0; k < taxa.size(); ++k) freq[taxa[k]] = r.frequency[k];
    j["frequency"] = freq;
    json sel = json::array();
    for (Index s : r.selected) sel.push_back(taxa[static_cast<std::size_t>(s)]);
    j["selected"] = sel;
    json refit = json::object();
    for (Index s : r.selected) refit[taxa[static_cast<std::size_t>(s)]] = r.refit(s);
    j["refit"] = refit;
    json lam = json::array();
    for (double l : r.lambda_star) lam.push_back(l);
    j["lambda_star"] = lam;
    return j;
}

inline void write_stability_csv(std::ostream& os, const StabilityReport& r, const std::vector<std::string>& taxa)
{
    os << "taxon,frequency,selected,sign\n";
    for (std::size_t k = 0; k < taxa.size(); ++k) {
        const bool sel = r.frequency[k] >= r.threshold;
        const int s = r.sign[k];
        os << csv::quote(taxa[k]) << ',' << csv::format_double(r.frequency[k]) << ',' << (sel ? 1 : 0) << ','
           << (sel ? (s > 0 ? "+" : (s < 0 ? "-" : "0")) : "") << '\n';
    }
}

inline json rip_json(const RipReport& r)
{
    json j;
    j["s"] = r.s;
    j["delta_s"] = r.delta_s;
    j["method"] = to_string(r.method);
    j["supports_checked"] = r.supports_checked;
    j["lower_bound"] = r.lower_bound;
    j["matrix"] = r.description;
    return j;
}

inline json rate_json(const RateReport& r, const std::string& x_name)
{
    json pts = json::array();
    for (const auto& p : r.points) pts.push_back({{x_name, p.x}, {"median_error", p.median}});
    return {{"points", pts}, {"slope", r.slope}, {"ci_low", r.ci_low}, {"ci_high", r.ci_high}, {"bootstrap", r.bootstrap}};
}

// 64-bit FNV-1a; a content fingerprint for manifests, not a security hash.
inline std::uint64_t fnv1a(const std::string& data)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

inline std::string read_text(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace logeiv::io

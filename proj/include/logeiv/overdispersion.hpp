#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "correction.hpp"
#include "csv.hpp"
#include "data_model.hpp"
#include "errors.hpp"

namespace logeiv {

// Rows of a CountMatrix that share one composition X_i and one alpha_i.
struct ReplicateGroup
{
    std::vector<Index> member_rows;
    std::string group_id;
};

struct AlphaEstimate
{
    double alpha_hat = kInfinity; // +inf when no overdispersion is detected
    double theta_hat = 0.0;       // 1 / (alpha + 1), clamped to [0, 1 - 1e-12]
    double theta_raw = 0.0;       // before clamping; negative values signal underdispersion
    std::string group_id;
    Index replicates = 0;
    double total_reads = 0.0;
};

inline constexpr double kMaxTheta = 1.0 - 1e-12;

// Method-of-moments estimate of the Dirichlet-multinomial intra-class
// correlation theta = 1/(alpha + 1) from J >= 2 replicates with unequal
// totals. Per taxon j, with pooled proportion pbar_j:
//   MSB_j = sum_r N_r (phat_rj - pbar_j)^2 / (J - 1)
//   MSW_j = sum_r N_r phat_rj (1 - phat_rj) / (sum_r N_r - J)
//   N_c   = (sum_r N_r - sum_r N_r^2 / sum_r N_r) / (J - 1)
//   theta = sum_j (MSB_j - MSW_j) / sum_j (MSB_j + (N_c - 1) MSW_j)
inline AlphaEstimate estimate_alpha_mom(const CountMatrix& counts, const ReplicateGroup& group)
{
    const auto J = static_cast<Index>(group.member_rows.size());
    if (J < 2) throw InputError("insufficient replicates in group '" + group.group_id + "' (need at least 2)");
    {
        auto sorted = group.member_rows;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw InputError("group '" + group.group_id + "' lists a row twice");
    }
    double sum_n = 0.0, sum_n2 = 0.0;
    for (Index r : group.member_rows) {
        if (r < 0 || r >= counts.rows())
            throw InputError("group '" + group.group_id + "' refers to row " + std::to_string(r) + " out of range");
        const double N = static_cast<double>(counts.row_totals()(r));
        if (N <= 0.0)
            throw InputError("sample '" + counts.sample_ids()[static_cast<std::size_t>(r)] + "' in group '" +
                             group.group_id + "' has zero total reads");
        sum_n += N;
        sum_n2 += N * N;
    }
    if (sum_n <= static_cast<double>(J))
        throw InputError("group '" + group.group_id + "' has too few reads for a moment estimate");

    const double nc = (sum_n - sum_n2 / sum_n) / static_cast<double>(J - 1);
    double numer = 0.0, denom = 0.0;
    for (Index j = 0; j < counts.cols(); ++j) {
        double pooled = 0.0;
        for (Index r : group.member_rows) pooled += static_cast<double>(counts(r, j));
        pooled /= sum_n;
        double ssb = 0.0, ssw = 0.0;
        for (Index r : group.member_rows) {
            const double N = static_cast<double>(counts.row_totals()(r));
            const double ph = static_cast<double>(counts(r, j)) / N;
            ssb += N * (ph - pooled) * (ph - pooled);
            ssw += N * ph * (1.0 - ph);
        }
        const double msb = ssb / static_cast<double>(J - 1);
        const double msw = ssw / (sum_n - static_cast<double>(J));
        numer += msb - msw;
        denom += msb + (nc - 1.0) * msw;
    }

    AlphaEstimate est;
    est.group_id = group.group_id;
    est.replicates = J;
    est.total_reads = sum_n;
    est.theta_raw = denom > 0.0 ? numer / denom : 0.0;
    est.theta_hat = std::clamp(est.theta_raw, 0.0, kMaxTheta);
    est.alpha_hat = est.theta_hat > 0.0 ? (1.0 - est.theta_hat) / est.theta_hat : kInfinity;
    return est;
}

// alpha for every row: the group's estimate for grouped rows, +inf elsewhere.
inline std::vector<double> estimate_alpha_all(const CountMatrix& counts, const std::vector<ReplicateGroup>& groups,
                                              std::vector<AlphaEstimate>* estimates = nullptr)
{
    std::vector<double> alpha(static_cast<std::size_t>(counts.rows()), kInfinity);
    std::vector<char> seen(static_cast<std::size_t>(counts.rows()), 0);
    for (const auto& g : groups) {
        for (Index r : g.member_rows) {
            if (r < 0 || r >= counts.rows())
                throw InputError("group '" + g.group_id + "' refers to row " + std::to_string(r) + " out of range");
            if (seen[static_cast<std::size_t>(r)])
                throw InputError("row " + std::to_string(r) + " belongs to more than one replicate group");
            seen[static_cast<std::size_t>(r)] = 1;
        }
    }
    if (estimates) estimates->clear();
    for (const auto& g : groups) {
        const AlphaEstimate est = estimate_alpha_mom(counts, g);
        for (Index r : g.member_rows) alpha[static_cast<std::size_t>(r)] = est.alpha_hat;
        if (estimates) estimates->push_back(est);
    }
    return alpha;
}

// Rows i and i + n/2 form group i (the paired simulation design).
inline std::vector<ReplicateGroup> pair_halves(Index n)
{
    if (n < 2 || n % 2 != 0) throw InputError("pairing halves needs an even number of samples, got " + std::to_string(n));
    std::vector<ReplicateGroup> groups;
    groups.reserve(static_cast<std::size_t>(n / 2));
    for (Index i = 0; i < n / 2; ++i) groups.push_back({{i, i + n / 2}, "pair" + std::to_string(i + 1)});
    return groups;
}

// Groups from a (sample_id, group_id) table. Groups appear in order of first
// mention; samples not listed stay ungrouped.
inline std::vector<ReplicateGroup> parse_groups(const csv::Table& table, const std::vector<std::string>& sample_ids,
                                                const std::string& source)
{
    if (table.header.size() != 2) throw InputError(source + ": expected two columns (sample_id, group_id)");
    std::map<std::string, Index> row_of;
    for (std::size_t i = 0; i < sample_ids.size(); ++i) row_of[sample_ids[i]] = static_cast<Index>(i);
    std::vector<ReplicateGroup> groups;
    std::map<std::string, std::size_t> group_index;
    for (std::size_t k = 0; k < table.rows.size(); ++k) {
        const auto& sid = table.rows[k][0];
        const auto& gid = table.rows[k][1];
        auto it = row_of.find(sid);
        if (it == row_of.end())
            throw InputError(source + ": line " + std::to_string(table.line_numbers[k]) + " names unknown sample '" +
                             sid + "'");
        auto [git, inserted] = group_index.try_emplace(gid, groups.size());
        if (inserted) groups.push_back({{}, gid});
        groups[git->second].member_rows.push_back(it->second);
    }
    return groups;
}

inline std::vector<ReplicateGroup> load_groups(const std::string& path, const std::vector<std::string>& sample_ids)
{
    return parse_groups(csv::read_file(path), sample_ids, path);
}

} // namespace logeiv

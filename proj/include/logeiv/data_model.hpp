#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "csv.hpp"
#include "errors.hpp"

namespace logeiv {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using CountArray = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CountVector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

namespace detail {

inline std::vector<std::string> default_ids(const char* prefix, Index count)
{
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) ids.push_back(prefix + std::to_string(i + 1));
    return ids;
}

} // namespace detail

// Read counts W (n samples x p taxa) with their per-sample totals N_i.
class CountMatrix
{
public:
    explicit CountMatrix(CountArray counts,
                         std::vector<std::string> sample_ids = {},
                         std::vector<std::string> taxon_ids = {})
        : counts_(std::move(counts)),
          sample_ids_(std::move(sample_ids)),
          taxon_ids_(std::move(taxon_ids))
    {
        validate_shape();
        totals_ = counts_.rowwise().sum();
    }

    CountMatrix(CountArray counts, CountVector row_totals,
                std::vector<std::string> sample_ids = {},
                std::vector<std::string> taxon_ids = {})
        : CountMatrix(std::move(counts), std::move(sample_ids), std::move(taxon_ids))
    {
        if (row_totals.size() != totals_.size()) {
            throw InputError("row_totals has length " + std::to_string(row_totals.size()) +
                             ", expected " + std::to_string(totals_.size()));
        }
        for (Index i = 0; i < totals_.size(); ++i) {
            if (row_totals(i) != totals_(i)) {
                throw InputError("row total of sample '" + sample_ids_[static_cast<std::size_t>(i)] +
                                 "' is " + std::to_string(row_totals(i)) + " but its counts sum to " +
                                 std::to_string(totals_(i)));
            }
        }
    }

    Index rows() const { return counts_.rows(); }
    Index cols() const { return counts_.cols(); }
    const CountArray& counts() const { return counts_; }
    const CountVector& row_totals() const { return totals_; }
    std::int64_t operator()(Index i, Index j) const { return counts_(i, j); }
    const std::vector<std::string>& sample_ids() const { return sample_ids_; }
    const std::vector<std::string>& taxon_ids() const { return taxon_ids_; }

    CountMatrix select_rows(const std::vector<Index>& idx) const
    {
        CountArray sub(static_cast<Index>(idx.size()), cols());
        std::vector<std::string> ids;
        ids.reserve(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            sub.row(static_cast<Index>(k)) = counts_.row(idx[k]);
            ids.push_back(sample_ids_[static_cast<std::size_t>(idx[k])]);
        }
        return CountMatrix(std::move(sub), std::move(ids), taxon_ids_);
    }

private:
    void validate_shape()
    {
        if (counts_.rows() < 1) throw InputError("count matrix needs at least one sample");
        if (counts_.cols() < 2) throw InputError("count matrix needs at least two taxa");
        if (sample_ids_.empty()) sample_ids_ = detail::default_ids("s", counts_.rows());
        if (taxon_ids_.empty()) taxon_ids_ = detail::default_ids("t", counts_.cols());
        if (static_cast<Index>(sample_ids_.size()) != counts_.rows())
            throw InputError("sample_ids length does not match the number of rows");
        if (static_cast<Index>(taxon_ids_.size()) != counts_.cols())
            throw InputError("taxon_ids length does not match the number of columns");
        for (Index i = 0; i < counts_.rows(); ++i) {
            for (Index j = 0; j < counts_.cols(); ++j) {
                if (counts_(i, j) < 0) {
                    throw InputError("negative count " + std::to_string(counts_(i, j)) + " at row " +
                                     std::to_string(i + 1) + ", column " + std::to_string(j + 1));
                }
            }
        }
    }

    CountArray counts_;
    CountVector totals_;
    std::vector<std::string> sample_ids_;
    std::vector<std::string> taxon_ids_;
};

// Linear equality constraints C^T beta = 0. The columns of C are kept as
// given; an orthonormal basis of col(C) is computed once with a
// column-pivoted Householder QR and used for every projection.
class ConstraintSpec
{
public:
    explicit ConstraintSpec(MatrixXd C) : C_(std::move(C))
    {
        if (C_.cols() < 1) throw InputError("constraint matrix needs at least one column");
        if (C_.rows() < 2) throw InputError("constraint matrix needs at least two rows");
        if (!C_.allFinite()) throw InputError("constraint matrix has non-finite entries");
        Eigen::ColPivHouseholderQR<MatrixXd> qr(C_);
        qr.setThreshold(1e-10);
        if (qr.rank() < C_.cols()) {
            throw NumericalError("constraint matrix has rank " + std::to_string(qr.rank()) + " < " +
                                 std::to_string(C_.cols()) + " columns");
        }
        if (C_.cols() >= C_.rows()) {
            throw NumericalError("constraints leave no free coefficients (r >= p)");
        }
        basis_ = qr.householderQ() * MatrixXd::Identity(C_.rows(), C_.cols());
    }

    // Single column 1_p: coefficients sum to zero.
    static ConstraintSpec compositional(Index p) { return ConstraintSpec(MatrixXd::Ones(p, 1)); }

    Index dim() const { return C_.rows(); }
    Index count() const { return C_.cols(); }
    const MatrixXd& matrix() const { return C_; }
    // Orthonormal p x r basis of col(C).
    const MatrixXd& basis() const { return basis_; }

    // (I - P_C) v without forming the p x p projector.
    VectorXd project_null(const VectorXd& v) const { return v - basis_ * (basis_.transpose() * v); }

    bool contains_ones() const
    {
        const VectorXd ones = VectorXd::Ones(dim());
        return project_null(ones).norm() <= 1e-10 * ones.norm();
    }

    // Constraint restricted to the given coordinates (rows of C). May be
    // rank deficient, so the raw sub-matrix is returned.
    MatrixXd restrict_rows(const std::vector<Index>& support) const
    {
        MatrixXd sub(static_cast<Index>(support.size()), count());
        for (std::size_t k = 0; k < support.size(); ++k) sub.row(static_cast<Index>(k)) = C_.row(support[k]);
        return sub;
    }

private:
    MatrixXd C_;
    MatrixXd basis_;
};

// Design (corrected or oracle log-covariates), response and constraint.
class RegressionData
{
public:
    RegressionData(MatrixXd design, VectorXd response, ConstraintSpec constraint)
        : design_(std::move(design)), response_(std::move(response)), constraint_(std::move(constraint))
    {
        if (design_.rows() != response_.size())
            throw InputError("design has " + std::to_string(design_.rows()) + " rows but response has " +
                             std::to_string(response_.size()) + " entries");
        if (design_.cols() != constraint_.dim())
            throw InputError("design has " + std::to_string(design_.cols()) + " columns but constraint has " +
                             std::to_string(constraint_.dim()) + " rows");
        if (design_.rows() < 1) throw InputError("regression needs at least one observation");
        if (!design_.allFinite()) throw InputError("design has non-finite entries");
        if (!response_.allFinite()) throw InputError("response has non-finite entries");
    }

    RegressionData(MatrixXd design, VectorXd response)
        : RegressionData(design, std::move(response), ConstraintSpec::compositional(design.cols()))
    {}

    Index n() const { return design_.rows(); }
    Index p() const { return design_.cols(); }
    const MatrixXd& design() const { return design_; }
    const VectorXd& response() const { return response_; }
    const ConstraintSpec& constraint() const { return constraint_; }

    RegressionData select_rows(const std::vector<Index>& idx) const
    {
        MatrixXd d(static_cast<Index>(idx.size()), p());
        VectorXd r(static_cast<Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            d.row(static_cast<Index>(k)) = design_.row(idx[k]);
            r(static_cast<Index>(k)) = response_(idx[k]);
        }
        return RegressionData(std::move(d), std::move(r), constraint_);
    }

private:
    MatrixXd design_;
    VectorXd response_;
    ConstraintSpec constraint_;
};

// I_p - C (C^T C)^+ C^T, symmetric and idempotent.
inline MatrixXd projector_null_space(const ConstraintSpec& constraint)
{
    const MatrixXd& Q = constraint.basis();
    MatrixXd M = MatrixXd::Identity(constraint.dim(), constraint.dim()) - Q * Q.transpose();
    return 0.5 * (M + M.transpose());
}

// design * (I - P_C): every row made orthogonal to col(C).
inline MatrixXd center_design(const MatrixXd& design, const ConstraintSpec& constraint)
{
    if (design.cols() != constraint.dim())
        throw InputError("center_design: design has " + std::to_string(design.cols()) +
                         " columns, constraint expects " + std::to_string(constraint.dim()));
    const MatrixXd& Q = constraint.basis();
    return design - (design * Q) * Q.transpose();
}

namespace detail {

inline std::int64_t parse_count_cell(const std::string& cell, const std::string& source, std::size_t line,
                                     const std::string& sample, const std::string& taxon)
{
    auto fail = [&](const char* why) -> std::int64_t {
        throw InputError(source + ": " + why + " '" + cell + "' at line " + std::to_string(line) +
                         ", sample '" + sample + "', taxon '" + taxon + "'");
    };
    if (cell.empty()) return fail("empty count");
    std::size_t pos = 0;
    bool negative = false;
    if (cell[0] == '+' || cell[0] == '-') {
        negative = cell[0] == '-';
        pos = 1;
    }
    if (pos == cell.size()) return fail("non-integer count");
    std::int64_t value = 0;
    for (; pos < cell.size(); ++pos) {
        const char c = cell[pos];
        if (c < '0' || c > '9') return fail("non-integer count");
        if (value > (INT64_MAX - 9) / 10) return fail("count out of range");
        value = value * 10 + (c - '0');
    }
    if (negative && value != 0) return fail("negative count");
    return value;
}

} // namespace detail

namespace detail {

inline bool is_integer_cell(const std::string& cell)
{
    if (cell.empty()) return false;
    std::size_t pos = (cell[0] == '+' || cell[0] == '-') ? 1 : 0;
    if (pos == cell.size()) return false;
    for (; pos < cell.size(); ++pos)
        if (cell[pos] < '0' || cell[pos] > '9') return false;
    return true;
}

inline bool looks_like_id_header(std::string h)
{
    for (auto& c : h) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return h.empty() || h == "sample" || h == "sample_id" || h == "sampleid" || h == "#sampleid" ||
           h == "id" || h == "#otu id" || h == "#otu_id";
}

} // namespace detail

// Parses an OTU-style table: header names the taxa, one sample per row,
// integer cells. The first column holds sample ids when its header is
// empty or an id name ("sample_id", "id", ...) or when any of its cells is
// not an integer; otherwise every column is a taxon and ids are generated.
inline CountMatrix parse_counts(const csv::Table& table, const std::string& source)
{
    const std::size_t n = table.rows.size();
    if (n == 0) throw InputError(source + ": no samples");
    bool has_ids = detail::looks_like_id_header(table.header.empty() ? std::string() : table.header[0]);
    for (std::size_t i = 0; i < n && !has_ids; ++i) has_ids = !detail::is_integer_cell(table.rows[i][0]);
    const std::size_t offset = has_ids ? 1 : 0;
    if (table.header.size() < offset + 2) throw InputError(source + ": need at least two taxa columns");
    const std::size_t p = table.header.size() - offset;
    CountArray counts(static_cast<Index>(n), static_cast<Index>(p));
    std::vector<std::string> samples;
    samples.reserve(n);
    std::vector<std::string> taxa(table.header.begin() + static_cast<std::ptrdiff_t>(offset), table.header.end());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = table.rows[i];
        samples.push_back(has_ids ? row[0] : "s" + std::to_string(i + 1));
        for (std::size_t j = 0; j < p; ++j) {
            counts(static_cast<Index>(i), static_cast<Index>(j)) =
                detail::parse_count_cell(row[j + offset], source, table.line_numbers[i], samples.back(), taxa[j]);
        }
    }
    return CountMatrix(std::move(counts), std::move(samples), std::move(taxa));
}

inline CountMatrix load_counts(const std::string& path)
{
    return parse_counts(csv::read_file(path), path);
}

} // namespace logeiv

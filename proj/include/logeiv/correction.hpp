#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "data_model.hpp"
#include "errors.hpp"

namespace logeiv {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class CorrectionKind
{
    multinomial_half,
    dirichlet_multinomial,
    general,
    zero_replace,
    oracle_log_composition,
};

enum class GeneralFamily
{
    poisson,
    normal, // N(nu, gamma * nu)
    gamma,  // Gamma(shape nu, scale gamma)
};

inline const char* to_string(CorrectionKind k)
{
    switch (k) {
    case CorrectionKind::multinomial_half: return "multinomial_half";
    case CorrectionKind::dirichlet_multinomial: return "dirichlet_multinomial";
    case CorrectionKind::general: return "general";
    case CorrectionKind::zero_replace: return "zero_replace";
    case CorrectionKind::oracle_log_composition: return "oracle_log_composition";
    }
    return "?";
}

inline const char* to_string(GeneralFamily f)
{
    switch (f) {
    case GeneralFamily::poisson: return "poisson";
    case GeneralFamily::normal: return "normal";
    case GeneralFamily::gamma: return "gamma";
    }
    return "?";
}

struct CorrectionRecipe
{
    CorrectionKind kind = CorrectionKind::multinomial_half;
    std::vector<double> alpha;                  // dirichlet_multinomial, one per row
    GeneralFamily family = GeneralFamily::poisson;
    double gamma = 1.0;                         // general normal/gamma
    double c = 0.5;                             // zero_replace

    static CorrectionRecipe multinomial() { return {}; }
    static CorrectionRecipe dirichlet(std::vector<double> alpha)
    {
        CorrectionRecipe r;
        r.kind = CorrectionKind::dirichlet_multinomial;
        r.alpha = std::move(alpha);
        return r;
    }
    static CorrectionRecipe general_family(GeneralFamily f, double gamma = 1.0)
    {
        CorrectionRecipe r;
        r.kind = CorrectionKind::general;
        r.family = f;
        r.gamma = gamma;
        return r;
    }
    static CorrectionRecipe zero_replacement(double c)
    {
        CorrectionRecipe r;
        r.kind = CorrectionKind::zero_replace;
        r.c = c;
        return r;
    }
    static CorrectionRecipe oracle()
    {
        CorrectionRecipe r;
        r.kind = CorrectionKind::oracle_log_composition;
        return r;
    }

    std::string describe() const
    {
        std::ostringstream os;
        os.precision(17);
        switch (kind) {
        case CorrectionKind::multinomial_half: os << "log(W + 1/2)"; break;
        case CorrectionKind::dirichlet_multinomial: {
            std::size_t finite = 0;
            for (double a : alpha) finite += std::isfinite(a) ? 1 : 0;
            os << "log(W + (N + alpha + 1) / (2 (alpha + 1))), " << finite << " of " << alpha.size()
               << " rows with finite alpha";
            break;
        }
        case CorrectionKind::general:
            os << "general " << to_string(family);
            if (family == GeneralFamily::normal) os << ": log(max(W + gamma/2, 1)), gamma = " << gamma;
            else if (family == GeneralFamily::gamma) os << ": log(W + gamma/2), gamma = " << gamma;
            else os << ": log(W + 1/2)";
            break;
        case CorrectionKind::zero_replace: os << "log(max(W, c)), c = " << c; break;
        case CorrectionKind::oracle_log_composition: os << "log(X) of the true composition"; break;
        }
        return os.str();
    }
};

struct CorrectedDesign
{
    MatrixXd matrix;
    CorrectionRecipe recipe;
    // Additive offset z_i used on row i. Zero for zero_replace and oracle recipes.
    VectorXd offsets;
};

// (N + alpha + 1) / (2 (alpha + 1)); 1/2 in the alpha -> infinity limit.
inline double dm_offset(double total, double alpha)
{
    if (std::isinf(alpha)) return 0.5;
    return (total + alpha + 1.0) / (2.0 * (alpha + 1.0));
}

namespace detail {

// Checks matrix(i, j) == log(W_ij + z_i) on up to ten cells spread over the
// matrix. Positions are fixed so repeated constructions check the same cells.
inline void spot_check_offsets(const CountMatrix& counts, const MatrixXd& m, const VectorXd& offsets)
{
    const Index n = counts.rows(), p = counts.cols();
    const Index total = n * p;
    const Index checks = std::min<Index>(10, total);
    for (Index k = 0; k < checks; ++k) {
        const Index flat = static_cast<Index>((static_cast<unsigned long long>(k) * 2654435761ULL) %
                                              static_cast<unsigned long long>(total));
        const Index i = flat / p, j = flat % p;
        const double expect = std::log(static_cast<double>(counts(i, j)) + offsets(i));
        if (!(std::abs(m(i, j) - expect) <= 1e-12 * (1.0 + std::abs(expect)))) {
            throw NumericalError("corrected design spot check failed at (" + std::to_string(i) + ", " +
                                 std::to_string(j) + ")");
        }
    }
}

inline CorrectedDesign add_offsets(const CountMatrix& counts, VectorXd offsets, CorrectionRecipe recipe)
{
    const Index n = counts.rows(), p = counts.cols();
    MatrixXd m(n, p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) m(i, j) = std::log(static_cast<double>(counts(i, j)) + offsets(i));
    spot_check_offsets(counts, m, offsets);
    return {std::move(m), std::move(recipe), std::move(offsets)};
}

} // namespace detail

// log(W + 1/2): no overdispersion.
inline CorrectedDesign correct_multinomial(const CountMatrix& counts)
{
    return detail::add_offsets(counts, VectorXd::Constant(counts.rows(), 0.5), CorrectionRecipe::multinomial());
}

// log(W_ij + z_i) with z_i = (N_i + alpha_i + 1) / (2 (alpha_i + 1)).
// alpha_i = +inf gives z_i = 1/2 exactly.
inline CorrectedDesign correct_dirichlet_multinomial(const CountMatrix& counts, const std::vector<double>& alpha)
{
    if (static_cast<Index>(alpha.size()) != counts.rows())
        throw InputError("alpha has " + std::to_string(alpha.size()) + " entries, expected " +
                         std::to_string(counts.rows()));
    VectorXd offsets(counts.rows());
    for (Index i = 0; i < counts.rows(); ++i) {
        const double a = alpha[static_cast<std::size_t>(i)];
        if (!(a > 0.0)) throw InputError("alpha[" + std::to_string(i) + "] must be positive or +inf");
        offsets(i) = dm_offset(static_cast<double>(counts.row_totals()(i)), a);
    }
    return detail::add_offsets(counts, std::move(offsets), CorrectionRecipe::dirichlet(alpha));
}

// Elementwise phi(W) for a continuous or count family with mean parameter nu:
//   poisson        log(W + 1/2)
//   normal(gamma)  log(max(W + gamma/2, 1))
//   gamma(gamma)   log(W + gamma/2)
inline CorrectedDesign correct_general(const MatrixXd& values, GeneralFamily family, double gamma = 1.0)
{
    if (family != GeneralFamily::poisson && !(gamma > 0.0))
        throw InputError("gamma must be positive for the normal and gamma families");
    const double shift = family == GeneralFamily::poisson ? 0.5 : gamma / 2.0;
    MatrixXd m(values.rows(), values.cols());
    for (Index i = 0; i < values.rows(); ++i) {
        for (Index j = 0; j < values.cols(); ++j) {
            double arg = values(i, j) + shift;
            if (family == GeneralFamily::normal) arg = std::max(arg, 1.0);
            if (!(arg > 0.0)) {
                throw InputError("value " + std::to_string(values(i, j)) + " at (" + std::to_string(i) + ", " +
                                 std::to_string(j) + ") is outside the support of the " + to_string(family) +
                                 " correction");
            }
            m(i, j) = std::log(arg);
        }
    }
    return {std::move(m), CorrectionRecipe::general_family(family, gamma), VectorXd::Constant(values.rows(), shift)};
}

// Baseline: log(max(W, c)); only zero counts are replaced.
inline CorrectedDesign zero_replace(const CountMatrix& counts, double c)
{
    if (!(c > 0.0)) throw InputError("zero-replacement constant must be positive");
    MatrixXd m(counts.rows(), counts.cols());
    for (Index i = 0; i < counts.rows(); ++i)
        for (Index j = 0; j < counts.cols(); ++j) m(i, j) = std::log(std::max(static_cast<double>(counts(i, j)), c));
    return {std::move(m), CorrectionRecipe::zero_replacement(c), VectorXd::Zero(counts.rows())};
}

// log X for known compositions; only available in simulation.
inline CorrectedDesign oracle_log_composition(const MatrixXd& compositions)
{
    if (!(compositions.array() > 0.0).all()) throw InputError("oracle compositions must be strictly positive");
    return {compositions.array().log().matrix(), CorrectionRecipe::oracle(), VectorXd::Zero(compositions.rows())};
}

} // namespace logeiv

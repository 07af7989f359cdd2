#pragma once

#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "assetis/subsets.hpp"
#include "assetis/types.hpp"

namespace assetis {

struct DlmOptions {
    double rel_tol = 1e-9;   // per-mask relative quadrature tolerance
    int max_depth = 15;      // adaptive Gauss-Kronrod refinement depth
    double upper_pad = 12.0; // integrate on [b, b + upper_pad]; beyond that the
                             // truncated Gaussian mass is < 1e-32 of typical p
};

namespace detail {

// p_DLM = sum_A int_b^inf 2 prod_j P0(|Z_{A+-j}| < z | Z_A = z) phi(z) dz with
// Gaussian conditionals; neighbor toggles that would empty the subset are
// skipped. CorrFn(A1, A2) supplies cor(Z_A1, Z_A2).
template <class CorrFn>
double dlm_generic(int M, CorrFn&& cor, double b, const DlmOptions& opt) {
    if (!(b > 0)) throw ConfigError("threshold b must be positive for the DLM approximation");
    const SubsetMask n_masks = (SubsetMask{1} << M) - 1;
    using quad = boost::math::quadrature::gauss_kronrod<double, 15>;
    double total = 0.0;
    std::vector<double> r;
    for (SubsetMask A = 1; A <= n_masks; ++A) {
        r.clear();
        for (int j = 0; j < M; ++j) {
            const SubsetMask nb = A ^ (SubsetMask{1} << j);
            if (nb == 0) continue;  // a singleton's emptying toggle has no neighbor
            const double rj = cor(A, nb);
            if (std::abs(rj) >= 1.0 - 1e-12)
                throw ConfigError("degenerate neighbor: subsets " + mask_to_string(A, M) +
                                  " and " + mask_to_string(nb, M) +
                                  " carry perfectly correlated statistics");
            r.push_back(rj);
        }
        auto integrand = [&r](double z) {
            double prod = 1.0;
            for (double rj : r) {
                const double s = std::sqrt(1.0 - rj * rj);
                prod *= norm_cdf(z * (1.0 - rj) / s) - norm_cdf(-z * (1.0 + rj) / s);
            }
            return 2.0 * prod * norm_pdf(z);
        };
        total += quad::integrate(integrand, b, b + opt.upper_pad, opt.max_depth, opt.rel_tol);
    }
    return total;
}

}  // namespace detail

// Analytic DLM approximation of P0(max_A |Z_A| > b) under the normal null.
inline double dlm_pvalue(const StudyDesign& design, double b, const DlmOptions& opt = {}) {
    if (design.has_sigma()) {
        OverlappingDesignStats stats(design);
        return detail::dlm_generic(
            design.num_studies(),
            [&stats](SubsetMask a, SubsetMask c) { return stats.correlation(a, c); }, b, opt);
    }
    IndependentDesignStats stats(design);
    return detail::dlm_generic(
        design.num_studies(),
        [&stats](SubsetMask a, SubsetMask c) { return stats.correlation(a, c); }, b, opt);
}

// DLM evaluated with the subset correlations induced by the expression sample
// correlation; this deliberately assumes normality of the conditional scores.
inline double dlm_pvalue_conditional(const ExpressionMatrix& y, double b, bool correlated = true,
                                     double ridge = 0.0, const DlmOptions& opt = {}) {
    // correlations depend only on Y, not on the allele frequency
    ConditionalStats stats(y, GenotypeModel::from_maf(0.5), correlated, ridge);
    return detail::dlm_generic(
        y.num_cell_types(),
        [&stats](SubsetMask a, SubsetMask c) { return stats.correlation(a, c); }, b, opt);
}

}  // namespace assetis

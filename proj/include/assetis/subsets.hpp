#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "assetis/types.hpp"

namespace assetis {

// Per-subset statistic description: meta weights (or GLS coefficients) over
// the member studies/cell types, the genotype weights omega (conditional
// mode), and the noncentrality scale of the subset.
struct SubsetStatistics {
    SubsetMask mask = 0;
    Eigen::VectorXd meta_weights;     // coefficient per member, in ascending study order
    Eigen::VectorXd omega;            // length N, conditional mode only
    double noncentral_scale = 0.0;
};

namespace detail {

inline Eigen::MatrixXd principal_submatrix(const Eigen::MatrixXd& S, SubsetMask A) {
    const int k = popcount(A);
    Eigen::MatrixXd sub(k, k);
    int r = 0;
    for (int i = 0; i < S.rows(); ++i) {
        if (!(A & (SubsetMask{1} << i))) continue;
        int c = 0;
        for (int j = 0; j < S.cols(); ++j) {
            if (!(A & (SubsetMask{1} << j))) continue;
            sub(r, c++) = S(i, j);
        }
        ++r;
    }
    return sub;
}

inline Eigen::VectorXd subvector(const Eigen::VectorXd& v, SubsetMask A) {
    Eigen::VectorXd out(popcount(A));
    int r = 0;
    for (int i = 0; i < v.size(); ++i)
        if (A & (SubsetMask{1} << i)) out[r++] = v[i];
    return out;
}

inline void check_conditioning(const Eigen::MatrixXd& sub, SubsetMask A, int width,
                               double min_eig, double max_cond) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sub, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (lo <= min_eig || hi / lo > max_cond)
        throw SingularMatrixError("principal submatrix for subset " + mask_to_string(A, width) +
                                  " is numerically singular");
}

}  // namespace detail

// Z_A machinery for independent studies: Z_A = sum_{m in A} sqrt(n_m / sum_A n) z_m.
// All 2^M - 1 statistics are evaluated through partial sums indexed by mask.
class IndependentDesignStats {
public:
    explicit IndependentDesignStats(const StudyDesign& design) {
        design.validate();
        if (design.has_sigma())
            throw ConfigError("independent-mode statistics require sigma to be absent");
        n_eff_ = design.effective_n();
        root_n_ = n_eff_.array().sqrt();
        M_ = design.num_studies();
        const std::size_t sz = std::size_t{1} << M_;
        nsum_.assign(sz, 0.0);
        inv_scale_.assign(sz, 0.0);
        for (SubsetMask m = 1; m < sz; ++m) {
            const int lb = __builtin_ctz(m);
            nsum_[m] = nsum_[m & (m - 1)] + n_eff_[lb];
            inv_scale_[m] = 1.0 / std::sqrt(nsum_[m]);
        }
    }

    int num_studies() const { return M_; }
    std::size_t num_masks() const { return (std::size_t{1} << M_) - 1; }
    double subset_n(SubsetMask A) const { return nsum_[A]; }

    double statistic(const Eigen::VectorXd& z, SubsetMask A) const {
        double s = 0.0;
        for (int m = 0; m < M_; ++m)
            if (A & (SubsetMask{1} << m)) s += root_n_[m] * z[m];
        return s * inv_scale_[A];
    }

    // out[A-1] = Z_A for every nonempty mask, via incremental partial sums.
    void all_statistics(const Eigen::VectorXd& z, std::vector<double>& out) const {
        const std::size_t sz = std::size_t{1} << M_;
        thread_local std::vector<double> partial;
        if (partial.size() < sz) partial.resize(sz);
        if (out.size() != sz - 1) out.resize(sz - 1);
        partial[0] = 0.0;
        for (SubsetMask m = 1; m < sz; ++m) {
            const int lb = __builtin_ctz(m);
            partial[m] = partial[m & (m - 1)] + root_n_[lb] * z[lb];
            out[m - 1] = partial[m] * inv_scale_[m];
        }
    }

    double correlation(SubsetMask A1, SubsetMask A2) const {
        if (A1 == A2) return 1.0;
        return nsum_[A1 & A2] * inv_scale_[A1] * inv_scale_[A2];
    }

    // Mean of (z_1,...,z_M) under the tilt driven by subset A at level sign*b.
    Eigen::VectorXd mean_shift(SubsetMask A, int sign, double b) const {
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(M_);
        for (int m = 0; m < M_; ++m)
            if (A & (SubsetMask{1} << m)) mu[m] = sign * b * root_n_[m] * inv_scale_[A];
        return mu;
    }

private:
    int M_ = 0;
    Eigen::VectorXd n_eff_, root_n_;
    std::vector<double> nsum_, inv_scale_;
};

// Z_A machinery for overlapping studies with score correlation Sigma:
// Z_A = N_A' Sigma_A^{-1} z_A / sqrt(N_A' Sigma_A^{-1} N_A). The zero-padded
// GLS coefficient vectors are cached per mask at construction.
class OverlappingDesignStats {
public:
    explicit OverlappingDesignStats(const StudyDesign& design) {
        design.validate();
        if (!design.has_sigma())
            throw ConfigError("overlapping-mode statistics require sigma");
        sigma_ = design.sigma;
        M_ = design.num_studies();
        const Eigen::VectorXd root_n = design.effective_n().array().sqrt();
        const std::size_t nm = num_masks();
        coef_.setZero(static_cast<Eigen::Index>(nm), M_);
        quad_.resize(nm);
        llt_.compute(sigma_);
        for (SubsetMask A = 1; A <= nm; ++A) {
            const Eigen::MatrixXd sub = detail::principal_submatrix(sigma_, A);
            detail::check_conditioning(sub, A, M_, 0.0, 1e12);
            const Eigen::VectorXd na = detail::subvector(root_n, A);
            const Eigen::VectorXd si_na = sub.llt().solve(na);
            const double quad = na.dot(si_na);
            quad_[A - 1] = quad;
            const double inv = 1.0 / std::sqrt(quad);
            int r = 0;
            for (int m = 0; m < M_; ++m)
                if (A & (SubsetMask{1} << m)) coef_(A - 1, m) = si_na[r++] * inv;
        }
    }

    int num_studies() const { return M_; }
    std::size_t num_masks() const { return (std::size_t{1} << M_) - 1; }
    const Eigen::MatrixXd& sigma() const { return sigma_; }
    const Eigen::LLT<Eigen::MatrixXd>& sigma_llt() const { return llt_; }
    double subset_quadratic(SubsetMask A) const { return quad_[A - 1]; }
    Eigen::VectorXd coefficients(SubsetMask A) const { return coef_.row(A - 1); }

    double statistic(const Eigen::VectorXd& z, SubsetMask A) const {
        return coef_.row(A - 1).dot(z);
    }

    void all_statistics(const Eigen::VectorXd& z, std::vector<double>& out) const {
        const std::size_t nm = num_masks();
        if (out.size() != nm) out.resize(nm);
        Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(nm)).noalias() =
            coef_ * z;
    }

    double correlation(SubsetMask A1, SubsetMask A2) const {
        if (A1 == A2) return 1.0;
        return coef_.row(A1 - 1) * sigma_ * coef_.row(A2 - 1).transpose();
    }

    Eigen::VectorXd mean_shift(SubsetMask A, int sign, double b) const {
        return sign * b * (sigma_ * coef_.row(A - 1).transpose());
    }

private:
    int M_ = 0;
    Eigen::MatrixXd sigma_;
    Eigen::MatrixXd coef_;       // (2^M - 1) x M, zero-padded GLS rows c_A
    std::vector<double> quad_;   // N_A' Sigma_A^{-1} N_A
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

// Conditional (genotype-driven) Z_A machinery. Each subset statistic has the
// linear representation Z_A = sum_i omega_{i,A} (g_i - 2f); the per-cell
// coefficients a_A give Z_A = a_A' z with z the per-cell score vector.
class ConditionalStats {
public:
    ConditionalStats(const ExpressionMatrix& y, const GenotypeModel& geno,
                     bool correlated, double ridge = 0.0)
        : geno_(geno), correlated_(correlated) {
        C_ = y.num_cell_types();
        N_ = y.num_subjects();
        if (C_ > kMaxStudies)
            throw ConfigError("C=" + std::to_string(C_) + " exceeds the subset cap of " +
                              std::to_string(kMaxStudies));
        const std::size_t nm = num_masks();
        cellcoef_.setZero(static_cast<Eigen::Index>(nm), C_);
        quad_.resize(nm);
        if (correlated_) {
            sigma_y_ = y.sample_correlation();
            for (SubsetMask A = 1; A <= nm; ++A) {
                Eigen::MatrixXd sub = detail::principal_submatrix(sigma_y_, A);
                if (ridge > 0.0)
                    sub.diagonal().array() += ridge;
                detail::check_conditioning(sub, A, C_, 1e-8, 1e12);
                const Eigen::VectorXd ones = Eigen::VectorXd::Ones(popcount(A));
                const Eigen::VectorXd si_one = sub.llt().solve(ones);
                const double quad = si_one.sum();
                quad_[A - 1] = quad;
                const double inv = 1.0 / std::sqrt(quad);
                int r = 0;
                for (int c = 0; c < C_; ++c)
                    if (A & (SubsetMask{1} << c)) cellcoef_(A - 1, c) = si_one[r++] * inv;
            }
        } else {
            sigma_y_ = Eigen::MatrixXd::Identity(C_, C_);
            for (SubsetMask A = 1; A <= nm; ++A) {
                const double inv = 1.0 / std::sqrt(static_cast<double>(popcount(A)));
                quad_[A - 1] = popcount(A);
                for (int c = 0; c < C_; ++c)
                    if (A & (SubsetMask{1} << c)) cellcoef_(A - 1, c) = inv;
            }
        }
        // omega_{i,A} = (Y a_A)_i / (sqrt(N) sigma_g)
        omega_ = y.values * cellcoef_.transpose() /
                 (std::sqrt(static_cast<double>(N_)) * geno_.sigma_g());
        y_ = y.values;
    }

    int num_cell_types() const { return C_; }
    int num_subjects() const { return N_; }
    std::size_t num_masks() const { return (std::size_t{1} << C_) - 1; }
    const GenotypeModel& genotype_model() const { return geno_; }
    const Eigen::MatrixXd& expression() const { return y_; }
    const Eigen::MatrixXd& score_correlation() const { return sigma_y_; }
    bool correlated() const { return correlated_; }

    Eigen::VectorXd omega(SubsetMask A) const { return omega_.col(A - 1); }
    const Eigen::MatrixXd& omega_table() const { return omega_; }

    // Per-cell scores z_c = sum_i y_ic (g_i - 2f) / (sqrt(N) sigma_g).
    Eigen::VectorXd scores(const std::vector<std::uint8_t>& g) const {
        // columns of Y have mean 0, so the -2f centering term vanishes and only
        // subjects with g_i != 0 contribute
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(C_);
        for (int i = 0; i < N_; ++i) {
            const double gi = g[static_cast<std::size_t>(i)];
            if (gi == 0.0) continue;
            acc += gi * y_.row(i).transpose();
        }
        return acc / (std::sqrt(static_cast<double>(N_)) * geno_.sigma_g());
    }

    void all_statistics(const Eigen::VectorXd& z, std::vector<double>& out) const {
        const std::size_t nm = num_masks();
        if (out.size() != nm) out.resize(nm);
        Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(nm)).noalias() =
            cellcoef_ * z;
    }

    double correlation(SubsetMask A1, SubsetMask A2) const {
        if (A1 == A2) return 1.0;
        return cellcoef_.row(A1 - 1) * sigma_y_ * cellcoef_.row(A2 - 1).transpose();
    }

    SubsetStatistics subset_statistics(SubsetMask A) const {
        SubsetStatistics s;
        s.mask = A;
        s.meta_weights = detail::subvector(cellcoef_.row(A - 1).transpose(), A);
        s.omega = omega_.col(A - 1);
        s.noncentral_scale = std::sqrt(quad_[A - 1]);
        return s;
    }

private:
    GenotypeModel geno_;
    bool correlated_;
    int C_ = 0, N_ = 0;
    Eigen::MatrixXd y_;         // standardized N x C
    Eigen::MatrixXd sigma_y_;   // (1/N) Y'Y, or identity in independent mode
    Eigen::MatrixXd cellcoef_;  // (2^C - 1) x C, zero-padded a_A rows
    Eigen::MatrixXd omega_;     // N x (2^C - 1)
    std::vector<double> quad_;
};

// -------- free-function convenience wrappers --------

inline double subset_statistic_independent(const Eigen::VectorXd& z, const StudyDesign& design,
                                           SubsetMask A) {
    return IndependentDesignStats(design).statistic(z, A);
}

inline double subset_statistic_overlapping(const Eigen::VectorXd& z, const StudyDesign& design,
                                           SubsetMask A) {
    return OverlappingDesignStats(design).statistic(z, A);
}

inline SubsetStatistics conditional_weights(const ExpressionMatrix& y, const GenotypeModel& geno,
                                            SubsetMask A, bool correlated) {
    return ConditionalStats(y, geno, correlated).subset_statistics(A);
}

inline double subset_correlation(const StudyDesign& design, SubsetMask A1, SubsetMask A2) {
    if (design.has_sigma()) return OverlappingDesignStats(design).correlation(A1, A2);
    return IndependentDesignStats(design).correlation(A1, A2);
}

inline double subset_correlation(const ExpressionMatrix& y, const GenotypeModel& geno,
                                 SubsetMask A1, SubsetMask A2, bool correlated = true) {
    return ConditionalStats(y, geno, correlated).correlation(A1, A2);
}

}  // namespace assetis

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace assetis {

// Exit codes used by the CLI; exceptions carry the category.
enum class ErrorCode : int {
    config = 2,
    data = 3,
    singular = 4,
    unattainable = 5,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(ErrorCode::config, msg) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(ErrorCode::data, msg) {}
};

class SingularMatrixError : public Error {
public:
    explicit SingularMatrixError(const std::string& msg) : Error(ErrorCode::singular, msg) {}
};

class UnattainableThresholdError : public Error {
public:
    explicit UnattainableThresholdError(const std::string& msg)
        : Error(ErrorCode::unattainable, msg) {}
};

// Nonempty subset of studies/cell types as a bitmask. Bit m set <=> study m in A.
using SubsetMask = std::uint32_t;

inline constexpr int kMaxStudies = 25;

inline int popcount(SubsetMask m) { return __builtin_popcount(m); }

inline std::string mask_to_string(SubsetMask m, int width) {
    std::string s(static_cast<std::size_t>(width), '0');
    for (int j = 0; j < width; ++j)
        if (m & (SubsetMask{1} << j)) s[static_cast<std::size_t>(width - 1 - j)] = '1';
    return s;
}

// Null model for the study-level score vector (z_1,...,z_M).
struct StudyDesign {
    Eigen::VectorXd n;              // per-study sample sizes, > 0
    Eigen::VectorXd case_fraction;  // empty, or per-study case fraction in (0,1)
    Eigen::MatrixXd sigma;          // empty (identity), or M x M score correlation

    int num_studies() const { return static_cast<int>(n.size()); }
    bool has_sigma() const { return sigma.size() > 0; }

    // n_m, or the case-control effective sample size n_m * phi_m * (1 - phi_m).
    Eigen::VectorXd effective_n() const {
        if (case_fraction.size() == 0) return n;
        return n.array() * case_fraction.array() * (1.0 - case_fraction.array());
    }

    void validate() const {
        const int M = num_studies();
        if (M < 1) throw ConfigError("study design needs at least one study");
        if (M > kMaxStudies)
            throw ConfigError("M=" + std::to_string(M) + " exceeds the subset cap of " +
                              std::to_string(kMaxStudies));
        for (int m = 0; m < M; ++m)
            if (!(n[m] > 0)) throw ConfigError("sample size must be positive (study " +
                                               std::to_string(m + 1) + ")");
        if (case_fraction.size() != 0) {
            if (case_fraction.size() != M)
                throw ConfigError("case_fraction length does not match n");
            for (int m = 0; m < M; ++m)
                if (!(case_fraction[m] > 0.0 && case_fraction[m] < 1.0))
                    throw ConfigError("case_fraction must lie strictly in (0,1)");
        }
        if (has_sigma()) {
            if (sigma.rows() != M || sigma.cols() != M)
                throw ConfigError("sigma must be M x M");
            if (!sigma.isApprox(sigma.transpose(), 1e-10))
                throw ConfigError("sigma must be symmetric");
            for (int m = 0; m < M; ++m)
                if (std::abs(sigma(m, m) - 1.0) > 1e-10)
                    throw ConfigError("sigma must have unit diagonal");
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
            if (es.eigenvalues().minCoeff() <= 1e-10)
                throw SingularMatrixError("sigma is not positive definite");
        }
    }
};

// HWE genotype law at allele frequency f in (0, 0.5].
struct GenotypeModel {
    double f = 0.0;
    bool folded = false;  // true when the input frequency was > 0.5 and got folded to 1-f

    static GenotypeModel from_maf(double maf) {
        GenotypeModel g;
        if (!(maf > 0.0 && maf < 1.0)) throw ConfigError("allele frequency must lie in (0,1)");
        if (maf > 0.5) {
            g.f = 1.0 - maf;
            g.folded = true;
        } else {
            g.f = maf;
        }
        return g;
    }

    double p0() const { return (1.0 - f) * (1.0 - f); }
    double p1() const { return 2.0 * f * (1.0 - f); }
    double p2() const { return f * f; }
    double sigma_g() const { return std::sqrt(2.0 * f * (1.0 - f)); }
};

// Subjects x cell types expression values, standardized column-wise with the
// 1/N convention so that (1/N) sum_i y_ic y_ic' is exactly the sample correlation.
struct ExpressionMatrix {
    Eigen::MatrixXd values;  // N x C, standardized
    std::vector<std::string> cell_labels;

    int num_subjects() const { return static_cast<int>(values.rows()); }
    int num_cell_types() const { return static_cast<int>(values.cols()); }

    static ExpressionMatrix from_raw(Eigen::MatrixXd raw, std::vector<std::string> labels = {}) {
        const auto N = raw.rows();
        const auto C = raw.cols();
        if (N < 2 || C < 1) throw DataError("expression matrix needs N >= 2 subjects, C >= 1 cell types");
        for (Eigen::Index c = 0; c < C; ++c) {
            double mean = raw.col(c).mean();
            raw.col(c).array() -= mean;
            double msq = raw.col(c).squaredNorm() / static_cast<double>(N);
            if (!(msq > 0)) throw DataError("expression column " + std::to_string(c + 1) + " is constant");
            raw.col(c) /= std::sqrt(msq);
        }
        ExpressionMatrix y;
        y.values = std::move(raw);
        if (labels.empty())
            for (Eigen::Index c = 0; c < C; ++c) labels.push_back("cell" + std::to_string(c + 1));
        if (static_cast<Eigen::Index>(labels.size()) != C)
            throw DataError("cell label count does not match column count");
        y.cell_labels = std::move(labels);
        return y;
    }

    // (1/N) Y'Y, the conditional correlation matrix of the per-cell scores.
    Eigen::MatrixXd sample_correlation() const {
        return values.transpose() * values / static_cast<double>(num_subjects());
    }
};

inline std::vector<SubsetMask> enumerate_subsets(int M) {
    if (M < 1 || M > kMaxStudies)
        throw ConfigError("study count must lie in [1," + std::to_string(kMaxStudies) +
                          "], got " + std::to_string(M));
    std::vector<SubsetMask> masks;
    masks.reserve((std::size_t{1} << M) - 1);
    for (SubsetMask m = 1; m < (SubsetMask{1} << M); ++m) masks.push_back(m);
    return masks;
}

// Standard normal distribution helpers; erfc-based for tail accuracy.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline double norm_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }
inline double norm_pdf(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}
// Two-sided single-test tail 2(1 - Phi(b)).
inline double two_sided_tail(double b) { return std::erfc(b / std::sqrt(2.0)); }

}  // namespace assetis

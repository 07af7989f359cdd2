#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "assetis/mc.hpp"
#include "assetis/subsets.hpp"
#include "assetis/types.hpp"

namespace assetis {

// One window of a b-grid served by a single simulation batch tilted at `anchor`.
struct RangeWindow {
    double anchor = 0.0;
    std::size_t first = 0;  // index range [first, last) into the grid
    std::size_t last = 0;
};

// Greedy left-to-right cover of an ascending grid by windows of the given
// half-width; the anchor is the midpoint of each window's span.
inline std::vector<RangeWindow> split_windows(const std::vector<double>& grid,
                                              double half_width = 0.75) {
    if (grid.empty()) throw ConfigError("b grid must be nonempty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0)) throw ConfigError("b values must be positive");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw ConfigError("b values must be ascending");
    }
    std::vector<RangeWindow> windows;
    std::size_t i = 0;
    while (i < grid.size()) {
        RangeWindow w;
        w.first = i;
        while (i < grid.size() && grid[i] <= grid[w.first] + 2.0 * half_width) ++i;
        w.last = i;
        w.anchor = 0.5 * (grid[w.first] + grid[w.last - 1]);
        windows.push_back(w);
    }
    return windows;
}

namespace detail {

// delta weight D / sum_A [exp(xi Z_A - c) + exp(-xi Z_A - c)] evaluated in log
// space; terms more than ~45 nats below the leading one are dropped.
inline double two_sided_mixture_weight(const std::vector<double>& z_all, double xi, double c,
                                       double maxabs, double count) {
    const double lead = xi * maxabs - c;
    double sum = 0.0;
    for (double za : z_all) {
        const double a = xi * za;
        if (std::abs(a) - c - lead < -45.0) continue;
        sum += std::exp(a - c - lead) + std::exp(-a - c - lead);
    }
    return count * std::exp(-lead) / sum;
}

// One IS batch over a grid window; Stats must provide num_masks(),
// mean_shift(A, sign, b) and all_statistics(z, out), and DrawZ fills z given
// the mean vector.
template <class Stats, class DrawZ>
void is_normal_window(const Stats& stats, DrawZ&& draw, const std::vector<double>& grid,
                      const RangeWindow& w, std::uint64_t K, std::uint64_t seed, int threads,
                      std::vector<Estimate>& out) {
    const std::size_t nm = stats.num_masks();
    const double xi = w.anchor;
    const double c = 0.5 * xi * xi;
    const double count = 2.0 * static_cast<double>(nm);
    const std::size_t n_points = w.last - w.first;

    // driving-subset mean shifts, cached for all (mask, sign) pairs
    std::vector<Eigen::VectorXd> shifts(2 * nm);
    for (SubsetMask A = 1; A <= nm; ++A) {
        shifts[2 * (A - 1)] = stats.mean_shift(A, +1, xi);
        shifts[2 * (A - 1) + 1] = stats.mean_shift(A, -1, xi);
    }

    struct Scratch {
        std::vector<double> z_all;
        Eigen::VectorXd z;
    };
    thread_local Scratch sc;
    auto body = [&](std::mt19937_64& rng, std::vector<Accumulator>& accs) {
        std::uniform_int_distribution<std::size_t> pick(0, 2 * nm - 1);
        const std::size_t pair = pick(rng);
        draw(rng, shifts[pair], sc.z);
        stats.all_statistics(sc.z, sc.z_all);
        double maxabs = 0.0;
        for (double za : sc.z_all) maxabs = std::max(maxabs, std::abs(za));
        double weight = 0.0;
        if (maxabs > grid[w.first])
            weight = two_sided_mixture_weight(sc.z_all, xi, c, maxabs, count);
        assert(weight <= count * std::exp(c - xi * grid[w.first]) * (1.0 + 1e-12));
        for (std::size_t j = 0; j < n_points; ++j)
            accs[j].add(maxabs > grid[w.first + j] ? weight : 0.0);
    };
    auto accs = run_blocks(K, seed, threads, n_points, body);
    for (std::size_t j = 0; j < n_points; ++j) out[w.first + j] = accs[j].finish(Method::IS);
}

inline void draw_iid_shifted(std::mt19937_64& rng, const Eigen::VectorXd& mu, Eigen::VectorXd& z) {
    std::normal_distribution<double> nd;
    z.resize(mu.size());
    for (Eigen::Index m = 0; m < mu.size(); ++m) z[m] = mu[m] + nd(rng);
}

// Square root of a PSD correlation matrix: Cholesky when PD, symmetric
// eigendecomposition fallback with tiny negative eigenvalues clamped.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& sigma) {
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
    if (es.eigenvalues().minCoeff() < -1e-8 * es.eigenvalues().cwiseAbs().maxCoeff())
        throw SingularMatrixError("correlation matrix is not positive semidefinite");
    return es.eigenvectors() *
           es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace detail

// -------- independent studies (sigma absent) --------

inline std::vector<Estimate> range_pvalues_independent(const StudyDesign& design,
                                                       const std::vector<double>& grid,
                                                       std::uint64_t K, std::uint64_t seed,
                                                       int threads = 1,
                                                       double half_width = 0.75) {
    IndependentDesignStats stats(design);
    std::vector<Estimate> out(grid.size());
    const auto windows = split_windows(grid, half_width);
    for (std::size_t wi = 0; wi < windows.size(); ++wi)
        detail::is_normal_window(stats, detail::draw_iid_shifted, grid, windows[wi], K,
                                 seed + 0x100000 * wi, threads, out);
    return out;
}

inline Estimate is_pvalue_independent(const StudyDesign& design, double b, std::uint64_t K,
                                      std::uint64_t seed, int threads = 1) {
    return range_pvalues_independent(design, {b}, K, seed, threads)[0];
}

// -------- overlapping studies (sigma present) --------

inline std::vector<Estimate> range_pvalues_overlapping(const StudyDesign& design,
                                                       const std::vector<double>& grid,
                                                       std::uint64_t K, std::uint64_t seed,
                                                       int threads = 1,
                                                       double half_width = 0.75) {
    OverlappingDesignStats stats(design);
    const Eigen::MatrixXd root = detail::psd_sqrt(stats.sigma());
    auto draw = [&root](std::mt19937_64& rng, const Eigen::VectorXd& mu, Eigen::VectorXd& z) {
        std::normal_distribution<double> nd;
        Eigen::VectorXd u(mu.size());
        for (Eigen::Index m = 0; m < mu.size(); ++m) u[m] = nd(rng);
        z = mu + root * u;
    };
    std::vector<Estimate> out(grid.size());
    const auto windows = split_windows(grid, half_width);
    for (std::size_t wi = 0; wi < windows.size(); ++wi)
        detail::is_normal_window(stats, draw, grid, windows[wi], K, seed + 0x100000 * wi,
                                 threads, out);
    return out;
}

inline Estimate is_pvalue_overlapping(const StudyDesign& design, double b, std::uint64_t K,
                                      std::uint64_t seed, int threads = 1) {
    return range_pvalues_overlapping(design, {b}, K, seed, threads)[0];
}

// -------- generic one-sided Gaussian-process IS --------

// P0(max_t z_t > b) for a discrete process with correlation matrix sigma.
inline Estimate is_pvalue_process(const Eigen::MatrixXd& sigma, double b, std::uint64_t K,
                                  std::uint64_t seed, int threads = 1) {
    const Eigen::Index T = sigma.rows();
    if (T < 1 || sigma.cols() != T) throw ConfigError("process sigma must be square");
    for (Eigen::Index t = 0; t < T; ++t)
        if (std::abs(sigma(t, t) - 1.0) > 1e-10)
            throw ConfigError("process sigma must have unit diagonal");
    const Eigen::MatrixXd root = detail::psd_sqrt(sigma);
    const double xi = b;
    const double c = 0.5 * xi * xi;
    auto body = [&](std::mt19937_64& rng, std::vector<Accumulator>& accs) {
        std::uniform_int_distribution<Eigen::Index> pick(0, T - 1);
        std::normal_distribution<double> nd;
        const Eigen::Index tau = pick(rng);
        Eigen::VectorXd u(T);
        for (Eigen::Index t = 0; t < T; ++t) u[t] = nd(rng);
        Eigen::VectorXd z = xi * sigma.col(tau) + root * u;
        const double zmax = z.maxCoeff();
        double delta = 0.0;
        if (zmax > b) {
            const double lead = xi * zmax - c;
            double sum = 0.0;
            for (Eigen::Index t = 0; t < T; ++t) {
                const double lt = xi * z[t] - c - lead;
                if (lt >= -45.0) sum += std::exp(lt);
            }
            delta = static_cast<double>(T) * std::exp(-lead) / sum;
        }
        accs[0].add(delta);
    };
    return run_blocks(K, seed, threads, 1, body)[0].finish(Method::IS);
}

// -------- naive Monte Carlo baseline --------

inline Estimate mc_pvalue_normal(const StudyDesign& design, double b, std::uint64_t K,
                                 std::uint64_t seed, int threads = 1) {
    if (!(b >= 0)) throw ConfigError("threshold b must be nonnegative");
    auto run = [&](const auto& stats, auto&& draw) {
        const Eigen::VectorXd zero = Eigen::VectorXd::Zero(design.num_studies());
        thread_local std::vector<double> z_all;
        thread_local Eigen::VectorXd z;
        auto body = [&](std::mt19937_64& rng, std::vector<Accumulator>& accs) {
            draw(rng, zero, z);
            stats.all_statistics(z, z_all);
            double maxabs = 0.0;
            for (double za : z_all) maxabs = std::max(maxabs, std::abs(za));
            accs[0].add(maxabs > b ? 1.0 : 0.0);
        };
        return run_blocks(K, seed, threads, 1, body)[0].finish(Method::MC);
    };
    if (design.has_sigma()) {
        OverlappingDesignStats stats(design);
        const Eigen::MatrixXd root = detail::psd_sqrt(stats.sigma());
        return run(stats, [&root](std::mt19937_64& rng, const Eigen::VectorXd& mu,
                                  Eigen::VectorXd& z) {
            std::normal_distribution<double> nd;
            Eigen::VectorXd u(mu.size());
            for (Eigen::Index m = 0; m < mu.size(); ++m) u[m] = nd(rng);
            z = mu + root * u;
        });
    }
    IndependentDesignStats stats(design);
    return run(stats, detail::draw_iid_shifted);
}

}  // namespace assetis

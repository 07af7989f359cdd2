#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "assetis/gaussian_is.hpp"
#include "assetis/mc.hpp"
#include "assetis/subsets.hpp"
#include "assetis/types.hpp"

namespace assetis {

struct CgfValue {
    double value = 0.0;  // phi_A(xi)
    double d1 = 0.0;     // phi_A'(xi), the tilted mean of Z_A
    double d2 = 0.0;     // phi_A''(xi), the tilted variance of Z_A
};

// CGF of Z_A = sum_i omega_i (g_i - 2f) under the HWE genotype law, with the
// per-subject three-term moment generating function evaluated under a
// max-exponent shift.
inline CgfValue cgf(const Eigen::VectorXd& omega, const GenotypeModel& geno, double xi) {
    const double f = geno.f;
    const double p[3] = {geno.p0(), geno.p1(), geno.p2()};
    CgfValue out;
    for (Eigen::Index i = 0; i < omega.size(); ++i) {
        const double w = omega[i];
        if (!std::isfinite(w)) throw DataError("non-finite subset weight");
        double e[3], wmax = -1e300;
        for (int k = 0; k < 3; ++k) {
            e[k] = xi * w * (k - 2.0 * f);
            wmax = std::max(wmax, e[k]);
        }
        double s0 = 0.0, s1 = 0.0, s2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double t = p[k] * std::exp(e[k] - wmax);
            const double x = w * (k - 2.0 * f);
            s0 += t;
            s1 += t * x;
            s2 += t * x * x;
        }
        out.value += wmax + std::log(s0);
        const double mean = s1 / s0;
        out.d1 += mean;
        out.d2 += s2 / s0 - mean * mean;
    }
    return out;
}

// Support bounds of Z_A over genotype vectors in {0,1,2}^N.
inline double attainable_max(const Eigen::VectorXd& omega, const GenotypeModel& geno) {
    const double f = geno.f;
    double s = 0.0;
    for (Eigen::Index i = 0; i < omega.size(); ++i)
        s += std::max(omega[i] * (2.0 - 2.0 * f), omega[i] * (-2.0 * f));
    return s;
}

inline double attainable_min(const Eigen::VectorXd& omega, const GenotypeModel& geno) {
    const double f = geno.f;
    double s = 0.0;
    for (Eigen::Index i = 0; i < omega.size(); ++i)
        s += std::min(omega[i] * (2.0 - 2.0 * f), omega[i] * (-2.0 * f));
    return s;
}

// Solves phi_A'(xi) = target by safeguarded Newton with a geometric bracket;
// phi' is strictly increasing, so the bracket shrinks monotonically.
inline double solve_tilt(const Eigen::VectorXd& omega, const GenotypeModel& geno,
                         double target) {
    if (omega.cwiseAbs().maxCoeff() == 0.0)
        throw UnattainableThresholdError("degenerate subset: all genotype weights are zero");
    if (target == 0.0) return 0.0;
    const double bound = target > 0 ? attainable_max(omega, geno) : attainable_min(omega, geno);
    if (!(std::abs(target) < std::abs(bound) - 1e-9 * std::abs(target)))
        throw UnattainableThresholdError(
            "target " + std::to_string(target) + " is outside the attainable range (bound " +
            std::to_string(bound) + ")");
    const double tol = 1e-10 * std::max(1.0, std::abs(target));
    const double var0 = cgf(omega, geno, 0.0).d2;
    double xi = target / var0;  // Gaussian-approximation start

    // bracket [lo, hi] with phi'(lo) < target < phi'(hi) (swapped for target < 0)
    double lo = 0.0, hi = xi;
    while (true) {
        const double d = cgf(omega, geno, hi).d1;
        if ((target > 0 && d >= target) || (target < 0 && d <= target)) break;
        lo = hi;
        hi *= 2.0;
        if (!std::isfinite(hi)) throw UnattainableThresholdError("tilt bracket expansion diverged");
    }
    if (target < 0) std::swap(lo, hi);  // keep lo < hi

    for (int iter = 0; iter < 200; ++iter) {
        const CgfValue c = cgf(omega, geno, xi);
        const double resid = c.d1 - target;
        if (std::abs(resid) <= tol) return xi;
        if (resid > 0)
            hi = std::min(hi, xi);
        else
            lo = std::max(lo, xi);
        double step = resid / c.d2;
        double next = xi - step;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        xi = next;
    }
    throw UnattainableThresholdError("tilt solve did not converge");
}

// Tilted genotype law P(g_i = k) proportional to exp{xi omega_i (k-2f)} P0(g_i = k).
inline std::vector<std::uint8_t> sample_tilted_genotypes(const Eigen::VectorXd& omega,
                                                         const GenotypeModel& geno, double xi,
                                                         std::mt19937_64& rng) {
    const auto n = static_cast<std::size_t>(omega.size());
    std::vector<std::uint8_t> g(n);
    std::uniform_real_distribution<double> unif;
    const double f = geno.f;
    const double p[3] = {geno.p0(), geno.p1(), geno.p2()};
    for (std::size_t i = 0; i < n; ++i) {
        const double w = omega[static_cast<Eigen::Index>(i)];
        double e[3], wmax = -1e300;
        for (int k = 0; k < 3; ++k) {
            e[k] = xi * w * (k - 2.0 * f);
            wmax = std::max(wmax, e[k]);
        }
        double q[3];
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += q[k] = p[k] * std::exp(e[k] - wmax);
        const double u = unif(rng) * s;
        g[i] = u < q[0] ? 0 : (u < q[0] + q[1] ? 1 : 2);
    }
    return g;
}

// One signed tilt: parameter, CGF value at the solution, and whether the
// target is attainable for this subset at all.
struct TiltSide {
    bool admissible = false;
    double xi = 0.0;
    double phi = 0.0;
};

struct TiltSolution {
    SubsetMask mask = 0;
    TiltSide plus, minus;
    double attainable_max = 0.0;
    double attainable_min = 0.0;
};

inline TiltSolution solve_tilts(const Eigen::VectorXd& omega, const GenotypeModel& geno,
                                double b, SubsetMask mask) {
    TiltSolution t;
    t.mask = mask;
    t.attainable_max = attainable_max(omega, geno);
    t.attainable_min = attainable_min(omega, geno);
    if (b < t.attainable_max - 1e-9 * b) {
        t.plus.admissible = true;
        t.plus.xi = solve_tilt(omega, geno, b);
        t.plus.phi = cgf(omega, geno, t.plus.xi).value;
    }
    if (-b > t.attainable_min + 1e-9 * b) {
        t.minus.admissible = true;
        t.minus.xi = solve_tilt(omega, geno, -b);
        t.minus.phi = cgf(omega, geno, t.minus.xi).value;
    }
    return t;
}

namespace detail {

// Precomputed per-subject inverse-CDF tables for every admissible
// (mask, sign) proposal, plus the tilt parameters entering the denominator.
class ConditionalProposal {
public:
    ConditionalProposal(const ConditionalStats& stats, double anchor_b) {
        const std::size_t nm = stats.num_masks();
        const int n = stats.num_subjects();
        const GenotypeModel& geno = stats.genotype_model();
        xi_.assign(2 * nm, 0.0);
        phi_.assign(2 * nm, 0.0);
        admissible_.assign(2 * nm, false);
        for (SubsetMask A = 1; A <= nm; ++A) {
            const Eigen::VectorXd omega = stats.omega(A);
            const TiltSolution t = solve_tilts(omega, geno, anchor_b, A);
            for (int side = 0; side < 2; ++side) {
                const TiltSide& s = side == 0 ? t.plus : t.minus;
                const std::size_t idx = 2 * (A - 1) + static_cast<std::size_t>(side);
                if (!s.admissible) continue;
                admissible_[idx] = true;
                xi_[idx] = s.xi;
                phi_[idx] = s.phi;
                pairs_.push_back(idx);
                cum_.emplace_back(tilted_cdf(omega, geno, s.xi, n));
            }
        }
        if (pairs_.empty())
            throw UnattainableThresholdError(
                "threshold b=" + std::to_string(anchor_b) +
                " is unattainable for every subset on both sides");
    }

    std::size_t num_pairs() const { return pairs_.size(); }
    bool admissible(std::size_t idx) const { return admissible_[idx]; }
    double xi(std::size_t idx) const { return xi_[idx]; }
    double phi(std::size_t idx) const { return phi_[idx]; }

    void sample(std::size_t pair, std::mt19937_64& rng, std::vector<std::uint8_t>& g) const {
        const auto& cum = cum_[pair];
        const auto n = cum.size() / 2;
        g.resize(n);
        std::uniform_real_distribution<double> unif;
        for (std::size_t i = 0; i < n; ++i) {
            const double u = unif(rng);
            g[i] = u < cum[2 * i] ? 0 : (u < cum[2 * i + 1] ? 1 : 2);
        }
    }

private:
    static std::vector<double> tilted_cdf(const Eigen::VectorXd& omega, const GenotypeModel& geno,
                                          double xi, int n) {
        std::vector<double> cum(2 * static_cast<std::size_t>(n));
        const double f = geno.f;
        const double p[3] = {geno.p0(), geno.p1(), geno.p2()};
        for (int i = 0; i < n; ++i) {
            const double w = omega[i];
            double e[3], wmax = -1e300;
            for (int k = 0; k < 3; ++k) {
                e[k] = xi * w * (k - 2.0 * f);
                wmax = std::max(wmax, e[k]);
            }
            double q[3];
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += q[k] = p[k] * std::exp(e[k] - wmax);
            cum[2 * static_cast<std::size_t>(i)] = q[0] / s;
            cum[2 * static_cast<std::size_t>(i) + 1] = (q[0] + q[1]) / s;
        }
        return cum;
    }

    std::vector<double> xi_, phi_;
    std::vector<bool> admissible_;
    std::vector<std::size_t> pairs_;        // indices 2*(A-1)+side of admissible pairs
    std::vector<std::vector<double>> cum_;  // per admissible pair: (c0, c1) per subject
};

}  // namespace detail

// Conditional IS estimator over a window of thresholds sharing one tilt table
// anchored at `anchor_b`. Masks whose tilt target is unattainable on a side
// are dropped from the proposal mixture and contribute 0 to the denominator
// on that side, keeping the likelihood-ratio identity exact.
inline std::vector<Estimate> range_pvalues_conditional(const ConditionalStats& stats,
                                                       const std::vector<double>& grid,
                                                       std::uint64_t K, std::uint64_t seed,
                                                       int threads = 1,
                                                       double half_width = 0.75) {
    std::vector<Estimate> out(grid.size());
    const auto windows = split_windows(grid, half_width);
    const std::size_t nm = stats.num_masks();
    for (std::size_t wi = 0; wi < windows.size(); ++wi) {
        const RangeWindow& w = windows[wi];
        const detail::ConditionalProposal prop(stats, w.anchor);
        const double count = static_cast<double>(prop.num_pairs());
        const std::size_t n_points = w.last - w.first;
        auto body = [&](std::mt19937_64& rng, std::vector<Accumulator>& accs) {
            thread_local std::vector<std::uint8_t> g;
            thread_local std::vector<double> z_all;
            std::uniform_int_distribution<std::size_t> pick(0, prop.num_pairs() - 1);
            prop.sample(pick(rng), rng, g);
            stats.all_statistics(stats.scores(g), z_all);
            double maxabs = 0.0;
            for (double za : z_all) maxabs = std::max(maxabs, std::abs(za));
            double weight = 0.0;
            if (maxabs > grid[w.first]) {
                // log-sum-exp over the admissible denominator terms
                double lead = -1e300;
                for (SubsetMask A = 1; A <= nm; ++A)
                    for (std::size_t side = 0; side < 2; ++side) {
                        const std::size_t idx = 2 * (A - 1) + side;
                        if (!prop.admissible(idx)) continue;
                        lead = std::max(lead,
                                        prop.xi(idx) * z_all[A - 1] - prop.phi(idx));
                    }
                double sum = 0.0;
                for (SubsetMask A = 1; A <= nm; ++A)
                    for (std::size_t side = 0; side < 2; ++side) {
                        const std::size_t idx = 2 * (A - 1) + side;
                        if (!prop.admissible(idx)) continue;
                        const double lt = prop.xi(idx) * z_all[A - 1] - prop.phi(idx) - lead;
                        if (lt >= -45.0) sum += std::exp(lt);
                    }
                weight = count * std::exp(-lead) / sum;
            }
            for (std::size_t j = 0; j < n_points; ++j)
                accs[j].add(maxabs > grid[w.first + j] ? weight : 0.0);
        };
        auto accs = run_blocks(K, seed + 0x100000 * wi, threads, n_points, body);
        for (std::size_t j = 0; j < n_points; ++j) out[w.first + j] = accs[j].finish(Method::IS);
    }
    return out;
}

inline std::vector<Estimate> range_pvalues_conditional(const ExpressionMatrix& y,
                                                       const GenotypeModel& geno,
                                                       const std::vector<double>& grid,
                                                       std::uint64_t K, std::uint64_t seed,
                                                       bool correlated = true, int threads = 1,
                                                       double half_width = 0.75,
                                                       double ridge = 0.0) {
    ConditionalStats stats(y, geno, correlated, ridge);
    return range_pvalues_conditional(stats, grid, K, seed, threads, half_width);
}

inline Estimate is_pvalue_conditional(const ExpressionMatrix& y, const GenotypeModel& geno,
                                      double b, std::uint64_t K, std::uint64_t seed,
                                      bool correlated = true, int threads = 1,
                                      double ridge = 0.0) {
    return range_pvalues_conditional(y, geno, {b}, K, seed, correlated, threads, 0.75, ridge)[0];
}

// Naive conditional Monte Carlo: genotypes drawn from the HWE trinomial.
inline Estimate mc_pvalue_conditional(const ConditionalStats& stats, double b, std::uint64_t K,
                                      std::uint64_t seed, int threads = 1) {
    const GenotypeModel& geno = stats.genotype_model();
    const double c0 = geno.p0();
    const double c1 = geno.p0() + geno.p1();
    const auto n = static_cast<std::size_t>(stats.num_subjects());
    auto body = [&](std::mt19937_64& rng, std::vector<Accumulator>& accs) {
        thread_local std::vector<std::uint8_t> g;
        thread_local std::vector<double> z_all;
        g.resize(n);
        std::uniform_real_distribution<double> unif;
        for (std::size_t i = 0; i < n; ++i) {
            const double u = unif(rng);
            g[i] = u < c0 ? 0 : (u < c1 ? 1 : 2);
        }
        stats.all_statistics(stats.scores(g), z_all);
        double maxabs = 0.0;
        for (double za : z_all) maxabs = std::max(maxabs, std::abs(za));
        accs[0].add(maxabs > b ? 1.0 : 0.0);
    };
    return run_blocks(K, seed, threads, 1, body)[0].finish(Method::MC);
}

inline Estimate mc_pvalue_conditional(const ExpressionMatrix& y, const GenotypeModel& geno,
                                      double b, std::uint64_t K, std::uint64_t seed,
                                      bool correlated = true, int threads = 1,
                                      double ridge = 0.0) {
    ConditionalStats stats(y, geno, correlated, ridge);
    return mc_pvalue_conditional(stats, b, K, seed, threads);
}

}  // namespace assetis

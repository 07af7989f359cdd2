#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "assetis/gaussian_is.hpp"

using namespace assetis;

namespace {

StudyDesign equal_design(int m, double n = 100.0) {
    StudyDesign d;
    d.n = Eigen::VectorXd::Constant(m, n);
    return d;
}

// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration on P_n.
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.resize(n);
    w.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
            }
            pp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / pp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * pp * pp);
    }
}

// Quadrature oracle for M=2 independent equal-n studies:
// p(b) = 1 - P(|z1|<=b, |z2|<=b, |z1+z2|/sqrt(2)<=b), 400-pt tensor grid on [-10,10]^2.
double quadrature_oracle_m2(double b) {
    std::vector<double> x, w;
    gauss_legendre(400, x, w);
    double inside = 0.0;
    for (int i = 0; i < 400; ++i) {
        const double z1 = 10.0 * x[i];
        if (std::abs(z1) > b) continue;
        for (int j = 0; j < 400; ++j) {
            const double z2 = 10.0 * x[j];
            if (std::abs(z2) > b || std::abs(z1 + z2) / std::sqrt(2.0) > b) continue;
            inside += 100.0 * w[i] * w[j] * norm_pdf(z1) * norm_pdf(z2);
        }
    }
    return 1.0 - inside;
}

}  // namespace

TEST_CASE("single study closed form") {
    const Estimate e = is_pvalue_independent(equal_design(1), 1.959964, 20000, 21);
    CHECK(std::abs(e.p_hat - 0.05) < 3 * e.se);
}

TEST_CASE("M=2 independent: IS and MC match the quadrature oracle") {
    const double oracle = quadrature_oracle_m2(3.0);
    const Estimate is = is_pvalue_independent(equal_design(2, 1.0), 3.0, 40000, 100);
    CHECK(std::abs(is.p_hat - oracle) < 3 * is.se);
    const Estimate mc = mc_pvalue_normal(equal_design(2, 1.0), 3.0, 200000, 101);
    CHECK(std::abs(mc.p_hat - oracle) < 3 * mc.se);
}

TEST_CASE("mc at b=0 is certain") {
    const Estimate e = mc_pvalue_normal(equal_design(3), 0.0, 1000, 1);
    CHECK(e.p_hat == 1.0);
}

TEST_CASE("overlapping identity sigma reduces to independent") {
    StudyDesign d = equal_design(3);
    StudyDesign dc = d;
    dc.sigma = Eigen::MatrixXd::Identity(3, 3);
    const Estimate a = is_pvalue_independent(d, 4.0, 30000, 9);
    const Estimate b = is_pvalue_overlapping(dc, 4.0, 30000, 10);
    CHECK(std::abs(a.p_hat - b.p_hat) < 3 * std::sqrt(a.se * a.se + b.se * b.se));
}

TEST_CASE("overlapping singleton is the two-sided normal tail") {
    StudyDesign d = equal_design(1);
    d.sigma = Eigen::MatrixXd::Identity(1, 1);
    const Estimate e = is_pvalue_overlapping(d, 3.0, 20000, 2);
    CHECK(std::abs(e.p_hat - two_sided_tail(3.0)) < 3 * e.se);
}

TEST_CASE("overlapping exchangeable matches naive MC") {
    StudyDesign d = equal_design(3);
    d.sigma = Eigen::MatrixXd::Constant(3, 3, 0.3);
    d.sigma.diagonal().setOnes();
    const Estimate is = is_pvalue_overlapping(d, 3.2, 30000, 3);
    const std::uint64_t kmc = static_cast<std::uint64_t>(100.0 / is.p_hat);
    const Estimate mc = mc_pvalue_normal(d, 3.2, kmc, 4);
    CHECK(std::abs(is.p_hat - mc.p_hat) < 3 * std::sqrt(is.se * is.se + mc.se * mc.se));
}

TEST_CASE("one-sided process IS closed forms") {
    Eigen::MatrixXd one = Eigen::MatrixXd::Identity(1, 1);
    const Estimate e1 = is_pvalue_process(one, 3.0, 20000, 5);
    CHECK(std::abs(e1.p_hat - norm_sf(3.0)) < 3 * e1.se);

    Eigen::MatrixXd two = Eigen::MatrixXd::Identity(2, 2);
    const Estimate e2 = is_pvalue_process(two, 3.0, 40000, 6);
    const double exact = 1.0 - std::pow(norm_cdf(3.0), 2);  // 0.0026980
    CHECK(exact == Catch::Approx(0.0026980).epsilon(1e-4));
    CHECK(std::abs(e2.p_hat - exact) < 3 * e2.se);
}

TEST_CASE("process IS matches naive MC on an exchangeable process") {
    const int T = 10;
    Eigen::MatrixXd sig = Eigen::MatrixXd::Constant(T, T, 0.5);
    sig.diagonal().setOnes();
    const double b = 4.0;
    const Estimate is = is_pvalue_process(sig, b, 30000, 7);

    // naive MC oracle, K = 1e7
    const Eigen::MatrixXd root = Eigen::LLT<Eigen::MatrixXd>(sig).matrixL();
    auto body = [&](std::mt19937_64& rng, std::vector<Accumulator>& accs) {
        std::normal_distribution<double> nd;
        Eigen::VectorXd u(T);
        for (int t = 0; t < T; ++t) u[t] = nd(rng);
        accs[0].add(((root * u).maxCoeff() > b) ? 1.0 : 0.0);
    };
    const Estimate mc = run_blocks(10000000, 8, 1, 1, body)[0].finish(Method::MC);
    CHECK(std::abs(is.p_hat - mc.p_hat) < 3 * std::sqrt(is.se * is.se + mc.se * mc.se));
}

TEST_CASE("unrestricted weights estimate 1 and respect the per-sample bound") {
    // manual tilted loop using the library pieces, with the indicator dropped
    StudyDesign d = equal_design(4);
    IndependentDesignStats stats(d);
    const double b = 3.5, xi = b, c = 0.5 * xi * xi;
    const std::size_t nm = stats.num_masks();
    const double count = 2.0 * static_cast<double>(nm);
    const double bound = count * std::exp(c - xi * b);
    std::mt19937_64 rng = rng_stream(55, 0);
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<std::size_t> pick(0, 2 * nm - 1);
    Accumulator acc;
    std::vector<double> all;
    for (int k = 0; k < 40000; ++k) {
        const std::size_t pair = pick(rng);
        const Eigen::VectorXd mu =
            stats.mean_shift(static_cast<SubsetMask>(pair / 2 + 1), pair % 2 ? -1 : +1, xi);
        Eigen::VectorXd z(4);
        for (int m = 0; m < 4; ++m) z[m] = mu[m] + nd(rng);
        stats.all_statistics(z, all);
        double maxabs = 0.0;
        for (double za : all) maxabs = std::max(maxabs, std::abs(za));
        const double w = detail::two_sided_mixture_weight(all, xi, c, maxabs, count);
        if (maxabs > b) CHECK(w <= bound * (1 + 1e-12));
        acc.add(w);
    }
    const Estimate e = acc.finish(Method::IS);
    CHECK(std::abs(e.p_hat - 1.0) < 5 * e.se);
}

TEST_CASE("sign symmetry of the tilted draw") {
    // mirrored signs with identical noise reproduce the delta statistics
    StudyDesign d = equal_design(3);
    IndependentDesignStats stats(d);
    const double b = 3.0, xi = b, c = 0.5 * xi * xi;
    const std::size_t nm = stats.num_masks();
    const double count = 2.0 * static_cast<double>(nm);
    Accumulator plus, minus;
    std::mt19937_64 rng = rng_stream(66, 0);
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<SubsetMask> pick(1, static_cast<SubsetMask>(nm));
    std::vector<double> all;
    for (int k = 0; k < 30000; ++k) {
        const SubsetMask A = pick(rng);
        Eigen::VectorXd noise(3);
        for (int m = 0; m < 3; ++m) noise[m] = nd(rng);
        for (int sign : {+1, -1}) {
            const Eigen::VectorXd z = stats.mean_shift(A, sign, xi) + sign * noise;
            stats.all_statistics(z, all);
            double maxabs = 0.0;
            for (double za : all) maxabs = std::max(maxabs, std::abs(za));
            const double w =
                maxabs > b ? detail::two_sided_mixture_weight(all, xi, c, maxabs, count) : 0.0;
            (sign > 0 ? plus : minus).add(w);
        }
    }
    // the Gaussian null is symmetric, so mirrored draws give identical weights
    CHECK(plus.finish(Method::IS).p_hat ==
          Catch::Approx(minus.finish(Method::IS).p_hat).epsilon(1e-12));
}

TEST_CASE("range mode: single point equals the dedicated estimator") {
    StudyDesign d = equal_design(5);
    const auto grid = range_pvalues_independent(d, {4.2}, 20000, 77);
    const Estimate single = is_pvalue_independent(d, 4.2, 20000, 77);
    CHECK(grid[0].p_hat == single.p_hat);
    CHECK(grid[0].se == single.se);
}

TEST_CASE("range mode: estimates are monotone within a shared batch") {
    StudyDesign d = equal_design(5);
    const std::vector<double> grid{3.8, 3.95, 4.1, 4.25, 4.4};
    const auto est = range_pvalues_independent(d, grid, 20000, 78);
    for (std::size_t i = 1; i < est.size(); ++i) CHECK(est[i].p_hat <= est[i - 1].p_hat);
}

TEST_CASE("window splitting covers ascending grids") {
    const auto w = split_windows({4.0, 4.5, 5.0, 5.6, 6.0}, 0.75);
    REQUIRE(w.size() == 2);
    CHECK(w[0].first == 0);
    CHECK(w[0].last == 3);
    CHECK(w[1].first == 3);
    CHECK(w[1].last == 5);
    CHECK(w[0].anchor == Catch::Approx(4.5));
    CHECK_THROWS_AS(split_windows({3.0, 2.0}), ConfigError);
    CHECK_THROWS_AS(split_windows({}), ConfigError);
}

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "assetis/dlm.hpp"

using namespace assetis;

namespace {

StudyDesign equal_design(int m) {
    StudyDesign d;
    d.n = Eigen::VectorXd::Constant(m, 100.0);
    return d;
}

}  // namespace

TEST_CASE("single study: DLM is the exact two-sided tail") {
    for (double b : {2.0, 3.0, 5.0, 8.0}) {
        CHECK(dlm_pvalue(equal_design(1), b) ==
              Catch::Approx(two_sided_tail(b)).margin(1e-10));
    }
}

TEST_CASE("DLM is monotone nonincreasing in b") {
    const StudyDesign d = equal_design(5);
    double prev = 1e300;
    for (double b = 3.0; b <= 8.0; b += 0.5) {
        const double p = dlm_pvalue(d, b);
        CHECK(p <= prev);
        prev = p;
    }
}

TEST_CASE("DLM respects the Bonferroni bound over subsets") {
    const StudyDesign d = equal_design(4);
    for (double b = 3.0; b <= 9.0; b += 1.0)
        CHECK(dlm_pvalue(d, b) <= 15.0 * two_sided_tail(b) * (1 + 1e-12));
}

TEST_CASE("quadrature refinement is stable to 0.1%") {
    const StudyDesign d = equal_design(6);
    for (double b : {3.0, 5.0, 7.0, 10.0}) {
        DlmOptions coarse, fine;
        fine.rel_tol = coarse.rel_tol * 0.5;
        const double pc = dlm_pvalue(d, b, coarse);
        const double pf = dlm_pvalue(d, b, fine);
        CHECK(pc == Catch::Approx(pf).epsilon(1e-3));
    }
}

TEST_CASE("conditional DLM: identity correlation reduces to the equal-n design") {
    // orthonormal standardized columns give an identity sample correlation
    Eigen::MatrixXd y(4, 3);
    y << 1, 1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1;
    y.col(2) << 1, -1, -1, 1;
    const ExpressionMatrix m = ExpressionMatrix::from_raw(y);
    REQUIRE(m.sample_correlation().isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-12));
    for (double b : {3.5, 5.0})
        CHECK(dlm_pvalue_conditional(m, b, true) ==
              Catch::Approx(dlm_pvalue(equal_design(3), b)).margin(1e-6));
}

TEST_CASE("conditional DLM: single cell type is the two-sided tail") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd y(50, 1);
    for (int i = 0; i < 50; ++i) y(i, 0) = nd(rng);
    const ExpressionMatrix m = ExpressionMatrix::from_raw(y);
    CHECK(dlm_pvalue_conditional(m, 4.0) == Catch::Approx(two_sided_tail(4.0)).margin(1e-10));
}

TEST_CASE("degenerate neighbor correlation is rejected") {
    auto cor = [](SubsetMask, SubsetMask) { return 1.0 - 1e-14; };
    CHECK_THROWS_AS(detail::dlm_generic(2, cor, 4.0, DlmOptions{}), ConfigError);
}

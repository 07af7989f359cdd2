#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <vector>

#include "assetis/mc.hpp"

using namespace assetis;

TEST_CASE("accumulate hand examples") {
    const Estimate e = accumulate(std::vector<double>{0, 0, 1, 1}, Method::IS);
    CHECK(e.p_hat == Catch::Approx(0.5));
    CHECK(e.var_delta == Catch::Approx(1.0 / 3.0));
    CHECK(e.se == Catch::Approx(std::sqrt((1.0 / 3.0) / 4.0)).epsilon(1e-12));  // 0.28868
    CHECK(e.hit_count == 2);

    const Estimate c = accumulate(std::vector<double>{0.7, 0.7, 0.7}, Method::IS);
    CHECK(c.p_hat == Catch::Approx(0.7));
    CHECK(c.se == Catch::Approx(0.0).margin(1e-14));

    CHECK_THROWS_AS(accumulate(std::vector<double>{1.0}), ConfigError);
}

TEST_CASE("all-zero deltas yield a flagged zero estimate") {
    const Estimate e = accumulate(std::vector<double>(100, 0.0), Method::IS);
    CHECK(e.p_hat == 0.0);
    CHECK(e.se == 0.0);
    CHECK(e.zero_hits);
}

TEST_CASE("efficiency definitional identities") {
    Estimate e;
    e.p_hat = 0.01;
    e.var_delta = e.p_hat * (1 - e.p_hat);
    e.K = 1000;
    const auto r = efficiency(e);
    CHECK(r.K_mc == Catch::Approx(1e4));
    CHECK(r.K_is == Catch::Approx(e.var_delta / (0.01 * e.p_hat * e.p_hat)));
    // K_mc/K_is reduces to p/var, which matches p(1-p)/var up to a 1-p factor
    CHECK(r.efficiency == Catch::Approx(e.p_hat / e.var_delta).epsilon(1e-12));
    CHECK(r.efficiency ==
          Catch::Approx(e.p_hat * (1 - e.p_hat) / e.var_delta).epsilon(0.011));
    e.p_hat = 0.0;
    CHECK_THROWS_AS(efficiency(e), ConfigError);
}

TEST_CASE("pairwise merge equals serial accumulation") {
    std::mt19937_64 rng(3);
    std::exponential_distribution<double> ed(2.0);
    std::vector<double> deltas(10000);
    for (auto& d : deltas) d = ed(rng);
    const Estimate serial = accumulate(deltas);

    std::vector<Accumulator> blocks(13);
    for (std::size_t i = 0; i < deltas.size(); ++i) blocks[i % 13].add(deltas[i]);
    const Estimate merged = merge_pairwise(blocks).finish(Method::IS);
    CHECK(merged.p_hat == Catch::Approx(serial.p_hat).epsilon(1e-12));
    CHECK(merged.var_delta == Catch::Approx(serial.var_delta).epsilon(1e-12));
    CHECK(merged.K == serial.K);
}

TEST_CASE("run_blocks is bit-identical across worker counts") {
    auto body = [](std::mt19937_64& rng, std::vector<Accumulator>& accs) {
        std::normal_distribution<double> nd;
        const double x = nd(rng);
        accs[0].add(x > 2.0 ? x : 0.0);
    };
    const auto a = run_blocks(30000, 42, 1, 1, body)[0].finish(Method::IS);
    const auto b = run_blocks(30000, 42, 4, 1, body)[0].finish(Method::IS);
    CHECK(a.p_hat == b.p_hat);  // exact bit equality
    CHECK(a.se == b.se);
    CHECK(a.hit_count == b.hit_count);
}

TEST_CASE("rng streams are reproducible and mutually independent") {
    auto r1 = rng_stream(777, 3);
    auto r2 = rng_stream(777, 3);
    for (int i = 0; i < 100; ++i) CHECK(r1() == r2());

    // two-sample KS test on 1e4 uniforms from streams 0 and 1, alpha = 0.01
    const int n = 10000;
    std::vector<double> u0(n), u1(n);
    auto s0 = rng_stream(777, 0);
    auto s1 = rng_stream(777, 1);
    std::uniform_real_distribution<double> unif;
    for (int i = 0; i < n; ++i) {
        u0[i] = unif(s0);
        u1[i] = unif(s1);
    }
    std::sort(u0.begin(), u0.end());
    std::sort(u1.begin(), u1.end());
    double dmax = 0.0;
    std::size_t i = 0, j = 0;
    while (i < u0.size() && j < u1.size()) {
        if (u0[i] <= u1[j])
            ++i;
        else
            ++j;
        dmax = std::max(dmax, std::abs(static_cast<double>(i) - static_cast<double>(j)) / n);
    }
    const double crit = 1.628 * std::sqrt(2.0 / n);  // c(0.01) sqrt((n+m)/(nm))
    CHECK(dmax < crit);
}

TEST_CASE("standard error shrinks like 1/sqrt(K)") {
    auto run = [](std::uint64_t K) {
        auto body = [](std::mt19937_64& rng, std::vector<Accumulator>& accs) {
            std::normal_distribution<double> nd;
            accs[0].add(std::abs(nd(rng)));
        };
        return run_blocks(K, 5, 1, 1, body)[0].finish(Method::IS);
    };
    const double se1 = run(20000).se;
    const double se4 = run(80000).se;
    CHECK(se4 == Catch::Approx(0.5 * se1).epsilon(0.2));
}

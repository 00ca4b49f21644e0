#include <catch2/catch_amalgamated.hpp>

#include "oracle_helpers.hpp"
#include "sctopic/rng.hpp"
#include "sctopic/stats.hpp"

using namespace sctopic;

TEST_CASE("hypergeometric tail on the worked example") {
    // population 10, successes 5, draws 4, observed 4: C(5,4)C(5,0)/C(10,4) = 5/210
    REQUIRE(hypergeom_upper_tail(10, 5, 4, 4) == Catch::Approx(5.0 / 210.0).margin(1e-12));
}

TEST_CASE("hypergeometric tail from zero is one") {
    REQUIRE(hypergeom_upper_tail(20, 3, 4, 0) == 1.0);
}

TEST_CASE("hypergeometric matches exhaustive enumeration for populations <= 20") {
    for (long long pop = 1; pop <= 20; ++pop)
        for (long long succ = 0; succ <= pop; ++succ)
            for (long long draws = 0; draws <= pop; ++draws)
                for (long long x = 0; x <= std::min(succ, draws); ++x)
                    REQUIRE(std::abs(hypergeom_upper_tail(pop, succ, draws, x) -
                                     oracle::exact_hypergeom_tail(pop, succ, draws, x)) < 1e-10);
}

TEST_CASE("hypergeometric validates parameters") {
    REQUIRE_THROWS_AS(hypergeom_upper_tail(5, 6, 2, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(hypergeom_upper_tail(5, 2, 6, 1), std::invalid_argument);
}

TEST_CASE("benjamini-hochberg on the worked example") {
    const auto q = benjamini_hochberg({0.01, 0.02, 0.03});
    REQUIRE(q[0] == Catch::Approx(0.03).margin(1e-15));
    REQUIRE(q[1] == Catch::Approx(0.03).margin(1e-15));
    REQUIRE(q[2] == Catch::Approx(0.03).margin(1e-15));
}

TEST_CASE("benjamini-hochberg trivial cases") {
    REQUIRE(benjamini_hochberg({0.2}) == std::vector<double>{0.2});
    REQUIRE(benjamini_hochberg({1.0, 1.0, 1.0}) == std::vector<double>{1.0, 1.0, 1.0});
    REQUIRE_THROWS_AS(benjamini_hochberg({1.5}), std::invalid_argument);
    REQUIRE_THROWS_AS(benjamini_hochberg({-0.1}), std::invalid_argument);
}

TEST_CASE("benjamini-hochberg matches the step-up definition on random vectors") {
    Rng rng(71);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + static_cast<std::size_t>(rng.uniform_int(0, 40));
        std::vector<double> p(m);
        for (auto& v : p) v = rng.uniform();
        REQUIRE(benjamini_hochberg(p) == oracle::naive_bh(p));
    }
}

TEST_CASE("benjamini-hochberg is invariant under input permutation") {
    Rng rng(73);
    std::vector<double> p(25);
    for (auto& v : p) v = rng.uniform();
    const auto q = benjamini_hochberg(p);

    std::vector<std::size_t> perm(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<double> shuffled(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) shuffled[i] = p[perm[i]];
    const auto q2 = benjamini_hochberg(shuffled);
    for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(q2[i] == q[perm[i]]);
}

TEST_CASE("q-values are never below their p-values and stay in range") {
    Rng rng(79);
    std::vector<double> p(60);
    for (auto& v : p) v = rng.uniform();
    const auto q = benjamini_hochberg(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
        REQUIRE(q[i] >= p[i] - 1e-15);
        REQUIRE(q[i] <= 1.0);
    }
}

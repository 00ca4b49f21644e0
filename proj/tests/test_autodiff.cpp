#include <catch2/catch_amalgamated.hpp>

#include "oracle_helpers.hpp"
#include "sctopic/autodiff.hpp"
#include "sctopic/rng.hpp"

using namespace sctopic;
namespace ad = sctopic::ad;

namespace {

ad::Var random_param(Rng& rng, Index rows, Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    rng.fill_normal(m, 0.0, scale);
    return ad::Var::parameter(std::move(m));
}

} // namespace

TEST_CASE("gradient of sum of squares is exact") {
    Rng rng(1);
    std::vector<ad::Var> params{random_param(rng, 3, 3)};
    auto loss = [&]() { return ad::sum(ad::square(params[0])); };
    REQUIRE(ad::grad_check(loss, params) < 1e-6);
}

TEST_CASE("elementwise ops pass finite-difference checks") {
    Rng rng(2);
    std::vector<ad::Var> params{random_param(rng, 3, 4), random_param(rng, 3, 4)};
    auto a = [&]() { return params[0]; };
    auto b = [&]() { return params[1]; };

    SECTION("add/sub/mul") {
        auto loss = [&]() {
            return ad::sum(ad::mul(ad::add(a(), b()), ad::sub(a(), ad::scale(b(), 0.5))));
        };
        REQUIRE(ad::grad_check(loss, params) < 1e-6);
    }
    SECTION("exp log tanh square") {
        auto loss = [&]() {
            const ad::Var pos = ad::add_scalar(ad::square(a()), 0.5);
            return ad::sum(ad::add(ad::tanh(ad::exp(ad::scale(a(), 0.3))), ad::log(pos)));
        };
        REQUIRE(ad::grad_check(loss, params) < 1e-5);
    }
    SECTION("xlogx") {
        auto loss = [&]() { return ad::xlogx_sum(ad::add_scalar(ad::square(a()), 0.1)); };
        REQUIRE(ad::grad_check(loss, params) < 1e-5);
    }
}

TEST_CASE("matmul transpose and broadcast ops pass finite-difference checks") {
    Rng rng(3);
    std::vector<ad::Var> params{random_param(rng, 3, 4), random_param(rng, 4, 2),
                                random_param(rng, 1, 2)};
    auto loss = [&]() {
        const ad::Var prod = ad::matmul(params[0], params[1]);
        const ad::Var shifted = ad::add_rowvec(prod, params[2]);
        return ad::sum(ad::square(ad::transpose(shifted)));
    };
    REQUIRE(ad::grad_check(loss, params) < 1e-6);
}

TEST_CASE("softmax-family ops pass finite-difference checks") {
    Rng rng(4);
    std::vector<ad::Var> params{random_param(rng, 4, 5)};
    Matrix weights(4, 5);
    rng.fill_normal(weights);
    const ad::Var w = ad::Var::constant(weights);

    SECTION("softmax_rows") {
        auto loss = [&]() { return ad::sum(ad::mul(ad::softmax_rows(params[0]), w)); };
        REQUIRE(ad::grad_check(loss, params) < 1e-6);
    }
    SECTION("log_softmax_rows") {
        auto loss = [&]() { return ad::sum(ad::mul(ad::log_softmax_rows(params[0]), w)); };
        REQUIRE(ad::grad_check(loss, params) < 1e-6);
    }
    SECTION("log_sum_exp_rows") {
        auto loss = [&]() { return ad::sum(ad::square(ad::log_sum_exp_rows(params[0]))); };
        REQUIRE(ad::grad_check(loss, params) < 1e-6);
    }
}

TEST_CASE("row-normalize concat diag ops pass finite-difference checks") {
    Rng rng(5);
    std::vector<ad::Var> params{random_param(rng, 3, 3), random_param(rng, 3, 2)};
    auto loss = [&]() {
        const ad::Var n0 = ad::l2_normalize_rows(ad::add_scalar(ad::square(params[0]), 0.2));
        const ad::Var cat = ad::concat_cols(n0, params[1]);
        const ad::Var lse = ad::log_sum_exp_rows(cat);
        return ad::add(ad::sum(lse), ad::sum(ad::diag_as_col(params[0])));
    };
    REQUIRE(ad::grad_check(loss, params) < 1e-6);
}

TEST_CASE("pairwise squared distances pass finite-difference checks") {
    Rng rng(6);
    std::vector<ad::Var> params{random_param(rng, 5, 3), random_param(rng, 2, 3)};
    Matrix weights(5, 2);
    rng.fill_normal(weights);
    auto loss = [&]() {
        return ad::sum(ad::mul(ad::pairwise_sq_dists(params[0], params[1]),
                               ad::Var::constant(weights)));
    };
    REQUIRE(ad::grad_check(loss, params) < 1e-6);
}

TEST_CASE("diamond-shaped graphs accumulate gradients once per path") {
    std::vector<ad::Var> params{ad::Var::parameter(Matrix::Constant(1, 1, 0.7))};
    // f(x) = x^2 + 3x reused through two paths
    auto loss = [&]() {
        const ad::Var x = params[0];
        return ad::add(ad::sum(ad::mul(x, x)), ad::sum(ad::scale(x, 3.0)));
    };
    ad::Var l = loss();
    l.backward();
    REQUIRE(params[0].grad()(0, 0) == Catch::Approx(2 * 0.7 + 3).margin(1e-12));
    REQUIRE(ad::grad_check(loss, params) < 1e-8);
}

TEST_CASE("backward resets gradients between calls") {
    std::vector<ad::Var> params{ad::Var::parameter(Matrix::Constant(1, 1, 2.0))};
    const ad::Var l1 = ad::sum(ad::square(params[0]));
    l1.backward();
    const double g1 = params[0].grad()(0, 0);
    const ad::Var l2 = ad::sum(ad::square(params[0]));
    l2.backward();
    REQUIRE(params[0].grad()(0, 0) == g1); // no accumulation across backward calls
}

TEST_CASE("backward requires a scalar and grad_check a finite loss") {
    ad::Var m = ad::Var::parameter(Matrix::Zero(2, 2));
    REQUIRE_THROWS_AS(m.backward(), std::logic_error);

    std::vector<ad::Var> params{ad::Var::parameter(Matrix::Constant(1, 1, -1.0))};
    auto bad = [&]() { return ad::log(params[0]); }; // log of a negative: NaN
    REQUIRE_THROWS_AS(ad::grad_check(bad, params), NumericError);
}

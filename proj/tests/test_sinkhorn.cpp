#include <catch2/catch_amalgamated.hpp>

#include "oracle_helpers.hpp"
#include "sctopic/rng.hpp"
#include "sctopic/sinkhorn.hpp"

using namespace sctopic;
namespace ad = sctopic::ad;

TEST_CASE("zero cost gives the product coupling") {
    const TransportPlan plan = sinkhorn({Matrix::Zero(2, 2), 0.1});
    REQUIRE(plan.converged);
    for (Index i = 0; i < 2; ++i)
        for (Index j = 0; j < 2; ++j)
            REQUIRE(plan.pi(i, j) == Catch::Approx(0.25).margin(1e-9));
}

TEST_CASE("small-epsilon 2x2 plan matches a grid-search oracle") {
    Matrix cost(2, 2);
    cost << 0, 1, 1, 0;
    const double eps = 0.01;
    const TransportPlan plan = sinkhorn({cost, eps}, 20000, 1e-10);

    // feasible couplings with uniform marginals form a 1-parameter family:
    // pi = [[t, .5-t], [.5-t, t]]; scan the entropic objective over t
    double best_t = 0.0, best_obj = std::numeric_limits<double>::infinity();
    for (int s = 1; s < 500000; ++s) {
        const double t = 0.5 * static_cast<double>(s) / 500000.0;
        Matrix pi(2, 2);
        pi << t, 0.5 - t, 0.5 - t, t;
        const double obj = entropic_objective(cost, pi, eps);
        if (obj < best_obj) {
            best_obj = obj;
            best_t = t;
        }
    }
    REQUIRE(plan.pi(0, 0) == Catch::Approx(best_t).margin(1e-5));
    REQUIRE(plan.pi(0, 1) < 1e-3);
    REQUIRE(plan.pi(1, 0) < 1e-3);
    REQUIRE(plan.pi(0, 0) == Catch::Approx(0.5).margin(1e-3));
}

TEST_CASE("converged plans respect the marginal constraints") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const Index v = 3 + static_cast<Index>(rng.uniform_int(0, 20));
        const Index k = 2 + static_cast<Index>(rng.uniform_int(0, 5));
        Matrix cost(v, k);
        rng.fill_uniform(cost, 0.0, 3.0);
        const double tol = 1e-8;
        const TransportPlan plan = sinkhorn({cost, 0.1}, 5000, tol);
        REQUIRE(plan.converged);
        REQUIRE(plan.marginal_violation < tol);
        REQUIRE((plan.pi.rowwise().sum().array() - 1.0 / static_cast<double>(v)).abs().sum() < tol);
        REQUIRE((plan.pi.colwise().sum().array() - 1.0 / static_cast<double>(k)).abs().sum() < tol);
        REQUIRE(plan.pi.minCoeff() > 0.0); // entropic interior
    }
}

TEST_CASE("transport cost is monotone as epsilon decreases") {
    Rng rng(31);
    for (int trial = 0; trial < 8; ++trial) {
        Matrix cost(5, 3);
        rng.fill_uniform(cost, 0.0, 2.0);
        double previous = std::numeric_limits<double>::infinity();
        for (const double eps : {1.0, 0.1, 0.01}) {
            const TransportPlan plan = sinkhorn({cost, eps}, 20000, 1e-9);
            const double transport = cost.cwiseProduct(plan.pi).sum();
            REQUIRE(transport <= previous + 1e-7);
            previous = transport;
        }
    }
}

TEST_CASE("entropic objective beats the independent coupling") {
    Rng rng(37);
    for (int trial = 0; trial < 8; ++trial) {
        Matrix cost(6, 3);
        rng.fill_uniform(cost, 0.0, 4.0);
        const double eps = 0.2;
        const TransportPlan plan = sinkhorn({cost, eps}, 10000, 1e-9);
        const Matrix independent = Matrix::Constant(6, 3, 1.0 / 18.0);
        REQUIRE(entropic_objective(cost, plan.pi, eps) <=
                entropic_objective(cost, independent, eps) + 1e-9);
    }
}

TEST_CASE("sinkhorn validates inputs") {
    REQUIRE_THROWS_AS(sinkhorn({Matrix::Zero(2, 2), 0.0}), std::invalid_argument);
    REQUIRE_THROWS_AS(sinkhorn({Matrix::Zero(2, 2), 0.1}, 100, 0.0), std::invalid_argument);
    Matrix bad = Matrix::Zero(2, 2);
    bad(0, 0) = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(sinkhorn({bad, 0.1}), NumericError);
}

TEST_CASE("ecr loss vanishes when genes sit on their topics") {
    Matrix coords(4, 2);
    coords << 1, 2, 1, 2, 1, 2, 1, 2;
    const ad::Var genes = ad::Var::parameter(coords);
    const ad::Var topics = ad::Var::parameter(coords.topRows(2));
    const EcrResult res = ecr_loss(genes, topics, 0.05);
    REQUIRE(res.loss.item() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("two clean 1-D clusters transport at near-zero cost") {
    Matrix g(4, 1);
    g << 0, 0, 10, 10;
    Matrix t(2, 1);
    t << 0, 10;
    const EcrResult res = ecr_loss(ad::Var::parameter(g), ad::Var::parameter(t), 0.01, 5000, 1e-9);

    // brute force over hard assignments with two genes per topic
    double best = std::numeric_limits<double>::infinity();
    const Matrix cost = pairwise_sq_dists(g, t);
    const Index genes[4] = {0, 1, 2, 3};
    for (Index a = 0; a < 4; ++a) {
        for (Index b = static_cast<Index>(a) + 1; b < 4; ++b) {
            double total = 0.0; // genes a,b -> topic 0, others -> topic 1
            for (Index m = 0; m < 4; ++m) {
                const Index topic = (m == genes[a] || m == genes[b]) ? 0 : 1;
                total += cost(m, topic) * 0.25;
            }
            best = std::min(best, total);
        }
    }
    REQUIRE(best == 0.0);
    REQUIRE(res.loss.item() == Catch::Approx(best).margin(1e-6));
}

TEST_CASE("ecr gradient passes finite differences with the plan frozen") {
    Rng rng(43);
    Matrix g(10, 3), t(3, 3);
    rng.fill_normal(g);
    rng.fill_normal(t);
    std::vector<ad::Var> params{ad::Var::parameter(g), ad::Var::parameter(t)};

    const TransportPlan plan =
        sinkhorn({pairwise_sq_dists(params[0].value(), params[1].value()), 0.1}, 5000, 1e-9);
    const ad::Var pi = ad::Var::constant(plan.pi);
    auto loss = [&]() {
        return ad::sum(ad::mul(ad::pairwise_sq_dists(params[0], params[1]), pi));
    };
    REQUIRE(ad::grad_check(loss, params) < 1e-4);
}

TEST_CASE("gradient steps on topics pull them toward plan barycenters") {
    Rng rng(47);
    Matrix g(30, 2), t(4, 2);
    rng.fill_normal(g, 0.0, 2.0);
    rng.fill_normal(t, 0.0, 0.1);
    const ad::Var genes = ad::Var::constant(g); // frozen
    ad::Var topics = ad::Var::parameter(t);

    auto mean_barycenter_gap = [&]() {
        const TransportPlan plan =
            sinkhorn({pairwise_sq_dists(g, topics.value()), 0.1}, 5000, 1e-9);
        double total = 0.0;
        for (Index k = 0; k < 4; ++k) {
            Eigen::RowVectorXd barycenter = Eigen::RowVectorXd::Zero(2);
            double mass = 0.0;
            for (Index m = 0; m < 30; ++m) {
                barycenter += plan.pi(m, k) * g.row(m);
                mass += plan.pi(m, k);
            }
            barycenter /= mass;
            total += (topics.value().row(k) - barycenter).norm();
        }
        return total / 4.0;
    };

    const double before = mean_barycenter_gap();
    for (int step = 0; step < 200; ++step) {
        const EcrResult res = ecr_loss(genes, topics, 0.1, 5000, 1e-9);
        res.loss.backward();
        topics.mutable_value() -= 0.01 * topics.grad();
    }
    REQUIRE(mean_barycenter_gap() < before);
}

TEST_CASE("ecr_loss validates shapes") {
    const ad::Var g = ad::Var::parameter(Matrix::Zero(2, 3));
    const ad::Var t = ad::Var::parameter(Matrix::Zero(4, 3));
    REQUIRE_THROWS_AS(ecr_loss(g, t, 0.1), std::invalid_argument); // fewer genes than topics
}

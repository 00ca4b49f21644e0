#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "sctopic/autodiff.hpp"
#include "sctopic/matrix.hpp"

namespace sctopic {

// Entropic OT between gene embeddings (rows, weight 1/V each) and topic
// embeddings (columns, weight 1/K each). Uniform marginals are fixed: free
// cluster sizes admit trivial solutions with empty clusters.
struct TransportProblem {
    Matrix cost;      // V x K, nonnegative
    double epsilon;   // entropic regularization strength
};

struct TransportPlan {
    Matrix pi;                 // V x K, strictly positive
    bool converged = false;
    Index iterations = 0;
    double marginal_violation = 0.0;
};

// Log-domain Sinkhorn with max-shifted log-sum-exp. Alternates the dual
// potential updates until the max L1 marginal violation drops below tol.
inline TransportPlan sinkhorn(const TransportProblem& problem, Index max_iter = 1000,
                              double tol = 1e-6) {
    if (problem.epsilon <= 0.0) throw std::invalid_argument("sinkhorn: epsilon must be > 0");
    if (tol <= 0.0) throw std::invalid_argument("sinkhorn: tol must be > 0");
    require_finite(problem.cost, "sinkhorn cost");

    const Index v = problem.cost.rows();
    const Index k = problem.cost.cols();
    const double eps = problem.epsilon;
    const double log_a = -std::log(static_cast<double>(v));
    const double log_b = -std::log(static_cast<double>(k));

    Vector f = Vector::Zero(v);
    Vector g = Vector::Zero(k);
    Matrix scaled = problem.cost / eps; // C / eps, reused every iteration

    TransportPlan plan;
    plan.pi.resize(v, k);
    auto form_plan = [&]() {
        for (Index m = 0; m < v; ++m)
            for (Index j = 0; j < k; ++j)
                plan.pi(m, j) = std::exp(f(m) + g(j) - scaled(m, j));
    };
    auto violation = [&]() {
        const double row = (plan.pi.rowwise().sum().array() - std::exp(log_a)).abs().sum();
        const double col = (plan.pi.colwise().sum().array() - std::exp(log_b)).abs().sum();
        return std::max(row, col);
    };

    // work in units of the potentials divided by eps: f here is f/eps
    Matrix work(v, k);
    for (Index it = 1; it <= max_iter; ++it) {
        for (Index m = 0; m < v; ++m) {
            double shift = -std::numeric_limits<double>::infinity();
            for (Index j = 0; j < k; ++j) shift = std::max(shift, g(j) - scaled(m, j));
            double acc = 0.0;
            for (Index j = 0; j < k; ++j) acc += std::exp(g(j) - scaled(m, j) - shift);
            f(m) = log_a - (shift + std::log(acc));
        }
        for (Index j = 0; j < k; ++j) {
            double shift = -std::numeric_limits<double>::infinity();
            for (Index m = 0; m < v; ++m) shift = std::max(shift, f(m) - scaled(m, j));
            double acc = 0.0;
            for (Index m = 0; m < v; ++m) acc += std::exp(f(m) - scaled(m, j) - shift);
            g(j) = log_b - (shift + std::log(acc));
        }
        form_plan();
        plan.iterations = it;
        plan.marginal_violation = violation();
        if (plan.marginal_violation < tol) {
            plan.converged = true;
            break;
        }
    }
    if (plan.iterations == 0) { // max_iter == 0
        form_plan();
        plan.marginal_violation = violation();
    }
    return plan;
}

// Transport cost of a plan under the entropic objective.
inline double entropic_objective(const Matrix& cost, const Matrix& pi, double eps) {
    double obj = cost.cwiseProduct(pi).sum();
    for (Index m = 0; m < pi.rows(); ++m)
        for (Index j = 0; j < pi.cols(); ++j)
            if (pi(m, j) > 0.0) obj += eps * pi(m, j) * (std::log(pi(m, j)) - 1.0);
    return obj;
}

struct EcrResult {
    ad::Var loss;        // scalar
    TransportPlan plan;  // diagnostics; pi is treated as constant by the loss
};

// Clustering regularizer: solve the plan on current values, then score
// sum_{m,k} ||g_m - t_k||^2 * pi_mk with the plan frozen, so gradients
// reach the embeddings only through the cost term.
inline EcrResult ecr_loss(const ad::Var& gene_embed, const ad::Var& topic_embed, double epsilon,
                          Index max_iter = 1000, double tol = 1e-6) {
    if (gene_embed.cols() < 1) throw std::invalid_argument("ecr_loss: embedding dim must be >= 1");
    if (gene_embed.rows() < topic_embed.rows())
        throw std::invalid_argument("ecr_loss: need at least as many genes as topics");

    TransportProblem problem{pairwise_sq_dists(gene_embed.value(), topic_embed.value()), epsilon};
    EcrResult out;
    out.plan = sinkhorn(problem, max_iter, tol);
    out.loss = ad::sum(ad::mul(ad::pairwise_sq_dists(gene_embed, topic_embed),
                               ad::Var::constant(out.plan.pi)));
    return out;
}

} // namespace sctopic

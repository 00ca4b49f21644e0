#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sctopic/matrix.hpp"

namespace sctopic {

inline double log_binom(long long n, long long k) {
    if (k < 0 || k > n) return -std::numeric_limits<double>::infinity();
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0);
}

// Upper-tail hypergeometric probability P[X >= observed] for `draws` draws
// without replacement from a population with `successes` marked items.
inline double hypergeom_upper_tail(long long population, long long successes, long long draws,
                                   long long observed) {
    if (population < 0 || successes < 0 || draws < 0 || successes > population ||
        draws > population)
        throw std::invalid_argument("hypergeom_upper_tail: invalid parameters");
    const long long lo = std::max<long long>(0, draws + successes - population);
    const long long hi = std::min(successes, draws);
    if (observed <= lo) return 1.0;
    if (observed > hi) return 0.0;
    const double log_total = log_binom(population, draws);
    double p = 0.0;
    for (long long x = observed; x <= hi; ++x)
        p += std::exp(log_binom(successes, x) + log_binom(population - successes, draws - x) -
                      log_total);
    return std::min(p, 1.0);
}

// Benjamini-Hochberg step-up: q_(i) = min_{j >= i} (m * p_(j) / j), clipped
// to 1, returned in input order.
inline std::vector<double> benjamini_hochberg(const std::vector<double>& pvalues) {
    const std::size_t m = pvalues.size();
    for (double p : pvalues)
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("benjamini_hochberg: p-values must lie in [0,1]");
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pvalues[a] < pvalues[b]; });
    std::vector<double> q(m);
    double running = 1.0;
    for (std::size_t r = m; r-- > 0;) {
        const double adjusted =
            static_cast<double>(m) * pvalues[order[r]] / static_cast<double>(r + 1);
        running = std::min(running, adjusted);
        q[order[r]] = std::min(running, 1.0);
    }
    return q;
}

} // namespace sctopic

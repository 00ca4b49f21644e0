#pragma once

// Independent reference implementations used as test oracles. Everything
// here is deliberately written the naive way (triple loops, exhaustive
// enumeration) and stays independent of the library code paths it checks.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sctopic/matrix.hpp"

namespace oracle {

using sctopic::Index;
using sctopic::Matrix;

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out = Matrix::Zero(a.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.cols(); ++j)
            for (Index k = 0; k < a.cols(); ++k)
                out(i, j) += a(i, k) * b(k, j);
    return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

inline double max_rel_diff(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            worst = std::max(worst, std::abs(a(i, j) - b(i, j)) /
                                        std::max(1.0, std::abs(b(i, j))));
    return worst;
}

// direct exp/sum softmax, no shift: only valid at small magnitudes
inline Matrix direct_softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        double total = 0.0;
        for (Index j = 0; j < m.cols(); ++j) total += std::exp(m(i, j));
        for (Index j = 0; j < m.cols(); ++j) out(i, j) = std::exp(m(i, j)) / total;
    }
    return out;
}

// brute-force k nearest neighbors by full distance table
inline std::vector<std::vector<Index>> brute_knn(const Matrix& points, Index k) {
    const Index n = points.rows();
    std::vector<std::vector<Index>> out(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        std::vector<std::pair<double, Index>> cand;
        for (Index j = 0; j < n; ++j) {
            if (j == i) continue;
            cand.emplace_back((points.row(i) - points.row(j)).squaredNorm(), j);
        }
        std::sort(cand.begin(), cand.end());
        for (Index s = 0; s < k; ++s) out[static_cast<std::size_t>(i)].push_back(cand[static_cast<std::size_t>(s)].second);
        std::sort(out[static_cast<std::size_t>(i)].begin(), out[static_cast<std::size_t>(i)].end());
    }
    return out;
}

// pair-counting ARI: a = both same, b = same pred only, c = same truth only
inline double pair_count_ari(const std::vector<int>& pred, const std::vector<int>& truth) {
    double a = 0, b = 0, c = 0, d = 0;
    const std::size_t n = pred.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool same_p = pred[i] == pred[j];
            const bool same_t = truth[i] == truth[j];
            if (same_p && same_t) ++a;
            else if (same_p) ++b;
            else if (same_t) ++c;
            else ++d;
        }
    }
    const double den = (a + b) * (b + d) + (a + c) * (c + d);
    if (den == 0.0) return 1.0;
    return 2.0 * (a * d - b * c) / den;
}

// entropy-route NMI from brute-force counting
inline double entropy_nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
    const double n = static_cast<double>(pred.size());
    std::map<int, double> cp, ct;
    std::map<std::pair<int, int>, double> cj;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        cp[pred[i]] += 1;
        ct[truth[i]] += 1;
        cj[{pred[i], truth[i]}] += 1;
    }
    auto entropy = [n](const auto& counts) {
        double h = 0;
        for (const auto& [key, v] : counts)
            if (v > 0) h -= (v / n) * std::log(v / n);
        return h;
    };
    const double hp = entropy(cp), ht = entropy(ct), hj = entropy(cj);
    if (hp == 0.0 || ht == 0.0) return (hp == 0.0 && ht == 0.0) ? 1.0 : 0.0;
    return (hp + ht - hj) / std::sqrt(hp * ht);
}

// all set partitions of {0..n-1} as label vectors (restricted growth strings)
inline std::vector<std::vector<int>> all_partitions(int n) {
    std::vector<std::vector<int>> out;
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    auto rec = [&](auto&& self, int pos, int max_used) -> void {
        if (pos == n) {
            out.push_back(labels);
            return;
        }
        for (int v = 0; v <= max_used + 1; ++v) {
            labels[static_cast<std::size_t>(pos)] = v;
            self(self, pos + 1, std::max(max_used, v));
        }
    };
    rec(rec, 1, 0); // element 0 always in block 0
    return out;
}

// exact binomial coefficients, fine for n <= 30
inline double exact_binom(long long n, long long k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (long long i = 0; i < k; ++i)
        r = r * static_cast<double>(n - i) / static_cast<double>(i + 1);
    return r;
}

// exhaustive hypergeometric upper tail from exact binomials
inline double exact_hypergeom_tail(long long pop, long long succ, long long draws, long long x) {
    double p = 0.0;
    const double total = exact_binom(pop, draws);
    for (long long i = std::max<long long>(x, 0); i <= std::min(succ, draws); ++i)
        p += exact_binom(succ, i) * exact_binom(pop - succ, draws - i) / total;
    return std::min(p, 1.0);
}

// naive O(m^2) step-up BH straight from the definition
inline std::vector<double> naive_bh(const std::vector<double>& p) {
    const std::size_t m = p.size();
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    std::vector<double> q(m);
    for (std::size_t r = 0; r < m; ++r) {
        double best = 1.0;
        for (std::size_t j = r; j < m; ++j) {
            const double adj = static_cast<double>(m) * p[order[j]] / static_cast<double>(j + 1);
            best = std::min(best, adj);
        }
        q[order[r]] = std::min(best, 1.0);
    }
    return q;
}

} // namespace oracle

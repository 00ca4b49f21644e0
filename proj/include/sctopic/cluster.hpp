#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "sctopic/matrix.hpp"
#include "sctopic/rng.hpp"

namespace sctopic {

struct ContingencyTable {
    std::vector<std::vector<long long>> counts; // r x c
    std::vector<long long> row_sums, col_sums;
    long long n = 0;

    static ContingencyTable from_labels(const std::vector<int>& pred,
                                        const std::vector<int>& truth) {
        if (pred.size() != truth.size())
            throw std::invalid_argument("ContingencyTable: label lengths differ");
        std::map<int, std::size_t> pid, tid;
        for (int v : pred) pid.emplace(v, pid.size());
        for (int v : truth) tid.emplace(v, tid.size());
        ContingencyTable t;
        t.counts.assign(pid.size(), std::vector<long long>(tid.size(), 0));
        t.row_sums.assign(pid.size(), 0);
        t.col_sums.assign(tid.size(), 0);
        t.n = static_cast<long long>(pred.size());
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const std::size_t r = pid[pred[i]], c = tid[truth[i]];
            ++t.counts[r][c];
            ++t.row_sums[r];
            ++t.col_sums[c];
        }
        return t;
    }
};

namespace detail {
inline double choose2(double x) { return x * (x - 1.0) / 2.0; }
}

// Pair-counting adjusted Rand index. Degenerate case (both partitions
// trivial) has zero denominator and means the partitions are identical.
inline double ari(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("ari: label lengths differ");
    if (pred.size() < 2) throw std::invalid_argument("ari: need n >= 2");
    const auto t = ContingencyTable::from_labels(pred, truth);

    double sum_cells = 0.0, sum_rows = 0.0, sum_cols = 0.0;
    for (std::size_t r = 0; r < t.counts.size(); ++r)
        for (std::size_t c = 0; c < t.counts[r].size(); ++c)
            sum_cells += detail::choose2(static_cast<double>(t.counts[r][c]));
    for (long long v : t.row_sums) sum_rows += detail::choose2(static_cast<double>(v));
    for (long long v : t.col_sums) sum_cols += detail::choose2(static_cast<double>(v));
    const double total_pairs = detail::choose2(static_cast<double>(t.n));

    const double numerator = total_pairs * sum_cells - sum_rows * sum_cols;
    const double denominator = total_pairs * (sum_rows + sum_cols) / 2.0 - sum_rows * sum_cols;
    if (denominator == 0.0) return 1.0;
    return numerator / denominator;
}

// NMI with geometric-mean normalization, natural log. Zero-entropy cases:
// 1 when the partitions agree, 0 otherwise.
inline double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("nmi: label lengths differ");
    if (pred.size() < 2) throw std::invalid_argument("nmi: need n >= 2");
    const auto t = ContingencyTable::from_labels(pred, truth);
    const double n = static_cast<double>(t.n);

    auto entropy = [n](const std::vector<long long>& sums) {
        double h = 0.0;
        for (long long v : sums)
            if (v > 0) h -= (static_cast<double>(v) / n) * std::log(static_cast<double>(v) / n);
        return h;
    };
    const double h_pred = entropy(t.row_sums);
    const double h_truth = entropy(t.col_sums);
    if (h_pred == 0.0 || h_truth == 0.0) {
        // all same cluster in one labeling: agreement iff the other is too
        return (h_pred == 0.0 && h_truth == 0.0) ? 1.0 : 0.0;
    }

    double mi = 0.0;
    for (std::size_t r = 0; r < t.counts.size(); ++r) {
        for (std::size_t c = 0; c < t.counts[r].size(); ++c) {
            const long long v = t.counts[r][c];
            if (v == 0) continue;
            const double pij = static_cast<double>(v) / n;
            mi += pij * std::log(static_cast<double>(v) * n /
                                 (static_cast<double>(t.row_sums[r]) * static_cast<double>(t.col_sums[c])));
        }
    }
    return mi / std::sqrt(h_pred * h_truth);
}

inline std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(static_cast<std::size_t>(m.rows()));
    for (Index i = 0; i < m.rows(); ++i) {
        Index best = 0;
        for (Index j = 1; j < m.cols(); ++j)
            if (m(i, j) > m(i, best)) best = j; // ties keep the lowest index
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

// Lloyd iterations from k-means++ seeding; runs to an assignment fixpoint
// or max_iter. Fully seeded.
inline std::vector<int> kmeans(const Matrix& points, Index k, std::uint64_t seed,
                               Index max_iter = 300) {
    const Index n = points.rows();
    if (k < 1 || k > n) throw std::invalid_argument("kmeans: require 1 <= k <= n");
    Rng rng(seed);

    Matrix centers(k, points.cols());
    centers.row(0) = points.row(rng.uniform_int(0, n - 1));
    Vector d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (Index c = 1; c < k; ++c) {
        std::vector<double> cdf(static_cast<std::size_t>(n));
        double acc = 0.0;
        for (Index i = 0; i < n; ++i) {
            acc += d2(i);
            cdf[static_cast<std::size_t>(i)] = acc;
        }
        Index pick;
        if (acc > 0.0) {
            pick = static_cast<Index>(rng.categorical(cdf));
        } else {
            pick = static_cast<Index>(rng.uniform_int(0, n - 1)); // all points coincide
        }
        centers.row(c) = points.row(pick);
        for (Index i = 0; i < n; ++i)
            d2(i) = std::min(d2(i), (points.row(i) - centers.row(c)).squaredNorm());
    }

    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    for (Index iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (Index i = 0; i < n; ++i) {
            Index best = 0;
            double best_d = (points.row(i) - centers.row(0)).squaredNorm();
            for (Index c = 1; c < k; ++c) {
                const double d = (points.row(i) - centers.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
                assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
                changed = true;
            }
        }
        if (!changed) break;
        Matrix sums = Matrix::Zero(k, points.cols());
        std::vector<Index> sizes(static_cast<std::size_t>(k), 0);
        for (Index i = 0; i < n; ++i) {
            sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
            ++sizes[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
        }
        for (Index c = 0; c < k; ++c)
            if (sizes[static_cast<std::size_t>(c)] > 0)
                centers.row(c) = sums.row(c) / static_cast<double>(sizes[static_cast<std::size_t>(c)]);
        // empty clusters keep their previous center
    }
    return assign;
}

enum class ClusterMode { argmax, kmeans };

inline std::vector<int> cluster_theta(const Matrix& theta, ClusterMode mode, Index k,
                                      std::uint64_t seed) {
    if (mode == ClusterMode::argmax) return argmax_rows(theta);
    return kmeans(theta, k, seed);
}

} // namespace sctopic

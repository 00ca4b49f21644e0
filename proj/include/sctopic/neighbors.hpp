#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "sctopic/matrix.hpp"
#include "sctopic/rng.hpp"

namespace sctopic {

// Mutual k-nearest-neighbor sets for one view. Cells whose mutual set is
// empty fall back to their plain kNN list and are flagged.
struct MutualKnn {
    Index k = 0;
    std::vector<std::vector<Index>> neighbors;
    std::vector<char> used_fallback;
};

// Brute-force Euclidean kNN (ties by lower index), then mutual filtering.
inline MutualKnn build_mutual_knn(const Matrix& points, Index k) {
    const Index n = points.rows();
    if (n < 2) throw std::invalid_argument("build_mutual_knn: need at least 2 points");
    if (k < 1 || k >= n) throw std::invalid_argument("build_mutual_knn: require 1 <= k < n");

    const Matrix d2 = pairwise_sq_dists(points, points);
    std::vector<std::vector<Index>> knn(static_cast<std::size_t>(n));
    std::vector<std::pair<double, Index>> cand;
    for (Index i = 0; i < n; ++i) {
        cand.clear();
        for (Index j = 0; j < n; ++j)
            if (j != i) cand.emplace_back(d2(i, j), j);
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        auto& lst = knn[static_cast<std::size_t>(i)];
        for (Index s = 0; s < k; ++s) lst.push_back(cand[static_cast<std::size_t>(s)].second);
        std::sort(lst.begin(), lst.end());
    }

    MutualKnn out;
    out.k = k;
    out.neighbors.resize(static_cast<std::size_t>(n));
    out.used_fallback.assign(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < n; ++i) {
        auto& mutual = out.neighbors[static_cast<std::size_t>(i)];
        for (Index j : knn[static_cast<std::size_t>(i)]) {
            const auto& back = knn[static_cast<std::size_t>(j)];
            if (std::binary_search(back.begin(), back.end(), i)) mutual.push_back(j);
        }
        if (mutual.empty()) {
            mutual = knn[static_cast<std::size_t>(i)];
            out.used_fallback[static_cast<std::size_t>(i)] = 1;
        }
    }
    return out;
}

struct NeighborIndex {
    MutualKnn x_view;
    MutualKnn v_view;
};

enum class View { x, v };

inline Index sample_neighbor(const NeighborIndex& index, View view, Index cell, Rng& rng) {
    const MutualKnn& knn = view == View::x ? index.x_view : index.v_view;
    const auto& lst = knn.neighbors[static_cast<std::size_t>(cell)];
    return lst[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(lst.size()) - 1))];
}

} // namespace sctopic

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

#include "sctopic/error.hpp"

namespace sctopic {

// Dense row-major doubles; the one tensor type used throughout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const std::string& what) {
    if (!m.allFinite()) throw NumericError(what + " contains non-finite values");
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ (" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
    }
    return a * b;
}

// Row-wise softmax with max shift; rows sum to 1 for any finite input.
inline Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        const double shift = m.row(i).maxCoeff();
        out.row(i) = (m.row(i).array() - shift).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

inline Vector log_sum_exp_rows(const Matrix& m) {
    Vector out(m.rows());
    for (Index i = 0; i < m.rows(); ++i) {
        const double shift = m.row(i).maxCoeff();
        out(i) = shift + std::log((m.row(i).array() - shift).exp().sum());
    }
    return out;
}

inline Matrix log_softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        const double shift = m.row(i).maxCoeff();
        const double lse = shift + std::log((m.row(i).array() - shift).exp().sum());
        out.row(i) = m.row(i).array() - lse;
    }
    return out;
}

// Squared Euclidean distances between rows of a (n x e) and rows of b (k x e).
inline Matrix pairwise_sq_dists(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("pairwise_sq_dists: feature dimensions differ");
    }
    Matrix out(a.rows(), b.rows());
    for (Index i = 0; i < a.rows(); ++i) {
        for (Index j = 0; j < b.rows(); ++j) {
            double acc = 0.0;
            for (Index e = 0; e < a.cols(); ++e) {
                const double d = a(i, e) - b(j, e);
                acc += d * d;
            }
            out(i, j) = acc;
        }
    }
    return out;
}

} // namespace sctopic

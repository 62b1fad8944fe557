#pragma once

#include "fasp/types.hpp"

#include <cmath>
#include <string>

// Dense primitives shared by every other module. All functions are pure and
// keep a fixed accumulation order: for each output element the contraction
// axis is consumed in ascending order, so results are reproducible and a
// plain triple-loop reference matches bit for bit.

namespace fasp {

// c = a * b with k consumed in ascending order per output coefficient.
// The i-k-j loop keeps row-major accesses contiguous; per (i,j) the update
// sequence is identical to the naive i-j-k loop.
template <typename Scalar>
dense_matrix<Scalar> matmul(const dense_matrix<Scalar>& a, const dense_matrix<Scalar>& b) {
    if (a.cols() != b.rows()) {
        throw shape_error("matmul: inner dimensions disagree (" + std::to_string(a.cols()) +
                          " vs " + std::to_string(b.rows()) + ")");
    }
    dense_matrix<Scalar> c = dense_matrix<Scalar>::Zero(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index k = 0; k < a.cols(); ++k) {
            c.row(i) += a(i, k) * b.row(k);
        }
    }
    return c;
}

// acc + x * x^T, explicitly symmetrized so the result is exact under transpose.
template <typename Scalar>
dense_matrix<Scalar> gram_accumulate(const dense_matrix<Scalar>& acc,
                                     const dense_matrix<Scalar>& x_chunk) {
    const Eigen::Index n = x_chunk.rows();
    if (acc.rows() != n || acc.cols() != n) {
        throw shape_error("gram_accumulate: accumulator is " + std::to_string(acc.rows()) + "x" +
                          std::to_string(acc.cols()) + ", chunk has " + std::to_string(n) +
                          " features");
    }
    dense_matrix<Scalar> g = acc + matmul<Scalar>(x_chunk, dense_matrix<Scalar>(x_chunk.transpose()));
    g = ((g + dense_matrix<Scalar>(g.transpose())) * Scalar(0.5)).eval();
    return g;
}

// Solves y * g = rhs for y, with g symmetric positive definite. The solve is
// an in-place LL^T factorization followed by two triangular substitutions;
// explicit inverses never appear on this path.
template <typename Scalar>
dense_matrix<Scalar> spd_solve(const dense_matrix<Scalar>& g, const dense_matrix<Scalar>& rhs) {
    const Eigen::Index k = g.rows();
    if (g.cols() != k) {
        throw shape_error("spd_solve: system matrix must be square");
    }
    if (rhs.cols() != k) {
        throw shape_error("spd_solve: rhs has " + std::to_string(rhs.cols()) +
                          " columns, system is " + std::to_string(k) + "x" + std::to_string(k));
    }

    dense_matrix<Scalar> l = dense_matrix<Scalar>::Zero(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        Scalar d = g(j, j) - l.row(j).head(j).squaredNorm();
        if (!(d > Scalar(0))) {
            throw not_positive_definite(j);
        }
        l(j, j) = std::sqrt(d);
        for (Eigen::Index i = j + 1; i < k; ++i) {
            const Scalar s = l.row(i).head(j).dot(l.row(j).head(j));
            l(i, j) = (g(i, j) - s) / l(j, j);
        }
    }

    // y * L L^T = rhs  =>  solve z L^T = rhs, then y L = z (right-hand solves).
    dense_matrix<Scalar> y = rhs;
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        // z L^T = rhs row-wise: forward pass over columns.
        for (Eigen::Index j = 0; j < k; ++j) {
            Scalar s = y(r, j);
            for (Eigen::Index i = 0; i < j; ++i) {
                s -= y(r, i) * l(j, i);
            }
            y(r, j) = s / l(j, j);
        }
        // y L = z: backward pass.
        for (Eigen::Index j = k - 1; j >= 0; --j) {
            Scalar s = y(r, j);
            for (Eigen::Index i = j + 1; i < k; ++i) {
                s -= y(r, i) * l(i, j);
            }
            y(r, j) = s / l(j, j);
        }
    }
    return y;
}

inline void check_gather_indices(const index_list& idx, Eigen::Index bound, const char* axis) {
    Eigen::Index prev = -1;
    for (Eigen::Index v : idx) {
        if (v < 0 || v >= bound) {
            throw index_error(std::string("gather: index ") + std::to_string(v) +
                              " out of range for " + axis + " bound " + std::to_string(bound));
        }
        if (v <= prev) {
            throw index_error(std::string("gather: indices must be strictly increasing, got ") +
                              std::to_string(prev) + " then " + std::to_string(v));
        }
        prev = v;
    }
}

template <typename Scalar>
dense_matrix<Scalar> gather_rows(const dense_matrix<Scalar>& a, const index_list& idx) {
    check_gather_indices(idx, a.rows(), "row");
    dense_matrix<Scalar> out(static_cast<Eigen::Index>(idx.size()), a.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = a.row(idx[i]);
    }
    return out;
}

template <typename Scalar>
dense_matrix<Scalar> gather_cols(const dense_matrix<Scalar>& a, const index_list& idx) {
    check_gather_indices(idx, a.cols(), "column");
    dense_matrix<Scalar> out(a.rows(), static_cast<Eigen::Index>(idx.size()));
    for (size_t j = 0; j < idx.size(); ++j) {
        out.col(static_cast<Eigen::Index>(j)) = a.col(idx[j]);
    }
    return out;
}

template <typename Scalar>
dense_vector<Scalar> gather_elems(const dense_vector<Scalar>& v, const index_list& idx) {
    check_gather_indices(idx, v.size(), "element");
    dense_vector<Scalar> out(static_cast<Eigen::Index>(idx.size()));
    for (size_t i = 0; i < idx.size(); ++i) {
        out[static_cast<Eigen::Index>(i)] = v[idx[i]];
    }
    return out;
}

// Per-column sum of |a_ij|, accumulated row by row so the pass stays
// contiguous for row-major storage.
template <typename Scalar>
dense_vector<Scalar> col_l1_norms(const dense_matrix<Scalar>& a) {
    dense_vector<Scalar> acc = dense_vector<Scalar>::Zero(a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        acc += a.row(i).cwiseAbs().transpose();
    }
    return acc;
}

template <typename Scalar>
dense_vector<Scalar> row_l2_norms(const dense_matrix<Scalar>& a) {
    dense_vector<Scalar> out(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        out[i] = a.row(i).norm();
    }
    return out;
}

// Complement of a strictly increasing index set within [0, n).
inline index_list complement_indices(const index_list& idx, Eigen::Index n) {
    index_list out;
    out.reserve(static_cast<size_t>(n) - idx.size());
    size_t p = 0;
    for (Eigen::Index v = 0; v < n; ++v) {
        if (p < idx.size() && idx[p] == v) {
            ++p;
        } else {
            out.push_back(v);
        }
    }
    return out;
}

}  // namespace fasp

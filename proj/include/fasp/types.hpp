#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fasp {

// Dense row-major matrix, scalar selectable. Weights live in f32, the
// calibration/restoration path in f64.
template <typename Scalar>
using dense_matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using dense_vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using matf = dense_matrix<float>;
using matd = dense_matrix<double>;
using vecf = dense_vector<float>;
using vecd = dense_vector<double>;

using index_list = std::vector<Eigen::Index>;
using token_id = int32_t;
using token_sequence = std::vector<token_id>;

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dimension mismatches between operands.
struct shape_error : error {
    using error::error;
};

// Out-of-range or non-increasing gather indices.
struct index_error : error {
    using error::error;
};

// Corpus / checkpoint / token problems.
struct data_error : error {
    using error::error;
};

// Infeasible sparsity plans, divisibility violations, empty masks.
struct plan_error : error {
    using error::error;
};

// Gram allocation above the configured cap.
struct resource_error : error {
    using error::error;
};

// Loss diverged during toy training.
struct training_error : error {
    using error::error;
};

// Post-surgery invariant violations; must be unreachable.
struct internal_error : error {
    using error::error;
};

// Cholesky hit a non-positive pivot: the damping term is too small.
struct not_positive_definite : error {
    explicit not_positive_definite(Eigen::Index pivot_index, const std::string& context = "")
        : error(context + "matrix not positive definite at pivot " +
                std::to_string(pivot_index) + " (raise the damping factor)"),
          pivot(pivot_index) {}
    Eigen::Index pivot;
};

}  // namespace fasp

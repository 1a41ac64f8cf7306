#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "textdemand/textprep.hpp"

namespace textdemand {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Title and description frequencies side by side: columns [0, title_cols)
/// are the title vocabulary, the rest the description vocabulary.
struct JointTextMatrix {
    std::vector<std::string> row_ids;
    SparseRowMatrix matrix;
    std::size_t title_cols = 0;
    std::size_t desc_cols = 0;
    std::vector<bool> missing_block;  // title or description had no in-vocabulary words
    std::string column_hash;

    std::size_t n_flagged() const;
};

/// Throws InvalidInput if the two matrices do not list the same row ids in
/// the same order.
JointTextMatrix build_joint_matrix(const FrequencyMatrix& title, const FrequencyMatrix& desc);

struct TsvdOptions {
    int oversampling = 10;
    int min_power_iterations = 2;
    int max_iterations = 500;
    double tolerance = 1e-6;  // max residual ||A v - s u|| relative to s_1
    std::uint64_t seed = 7;
};

struct PcBasis {
    int k = 0;
    Eigen::MatrixXd v;              // n_cols x k right singular vectors
    Eigen::VectorXd singular_values;
    Eigen::VectorXd explained;      // per-component share of the squared Frobenius norm
    double total_explained = 0.0;
    std::string column_hash;
    int iterations = 0;
    Eigen::VectorXd residuals;

    std::string to_json() const;
    static PcBasis from_json(std::string_view text);
};

/// Top-k singular triplets of the uncentered matrix by randomized subspace
/// iteration. Each right singular vector is signed so that its largest
/// magnitude entry is positive. Throws InvalidInput unless
/// 1 <= k <= min(rows, cols); ConvergenceError carrying the residual norms
/// if the iteration limit is reached.
PcBasis fit_tsvd(const JointTextMatrix& matrix, int k, const TsvdOptions& options = {});

/// Scores = rows * V_k. Throws InvalidInput if the matrix was built over a
/// different column space.
Eigen::MatrixXd project(const JointTextMatrix& rows, const PcBasis& basis);

}  // namespace textdemand

#pragma once

#include <Eigen/Dense>

namespace rdl {

/// Lawson-Hanson active-set nonnegative least squares: min ||A x - b||, x >= 0.
Eigen::VectorXd solveNnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                          int max_iter = 0, double tol = 1e-12);

/// Same solver in normal-equation form: G = A^T A, c = A^T b. Preferred when
/// A has far more rows than columns.
Eigen::VectorXd solveNnlsGram(const Eigen::MatrixXd& G, const Eigen::VectorXd& c,
                              int max_iter = 0, double tol = 1e-12);

}  // namespace rdl

#pragma once

#include <Eigen/Dense>

namespace impose {

struct PcaResult {
  Eigen::VectorXd mean;        // column mean of the input rows
  Eigen::MatrixXd components;  // 3 x D, orthonormal rows, deterministic sign
  Eigen::Vector3d variances;   // eigenvalues, non-increasing
  Eigen::MatrixXd projected;   // n x 3
  bool degenerate = false;     // a requested component had zero variance
};

// Top-3 principal components by power iteration with deflation. Stops when the
// direction moves by less than `tol` between iterations. Throws DegenerateError
// for fewer than 4 rows. Zero-variance directions are completed with arbitrary
// orthonormal vectors and flagged instead of failing.
PcaResult pca3(const Eigen::MatrixXd& rows, double tol = 1e-10, int max_iterations = 10000);

}  // namespace impose

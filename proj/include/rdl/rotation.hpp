#pragma once

#include <Eigen/Dense>
#include <vector>

namespace rdl {

inline int rotDim(int dim) { return dim == 2 ? 1 : 3; }

/// Rotation exponential with analytic derivatives. In 2D w is a scalar angle,
/// in 3D a rotation vector. The theta -> 0 limit switches to series expansions
/// below theta = 1e-4.
struct RotationExp {
  Eigen::MatrixXd R;                            // d x d
  std::vector<Eigen::MatrixXd> dR;              // rot_dim, each d x d
  std::vector<std::vector<Eigen::MatrixXd>> ddR;  // rot_dim x rot_dim
};

/// order: 0 = value only, 1 = first derivative, 2 = both derivatives.
RotationExp expRot(int dim, const Eigen::VectorXd& w, int order = 2);

Eigen::Matrix3d crossMatrix(const Eigen::Vector3d& v);

}  // namespace rdl

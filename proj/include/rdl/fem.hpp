#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <memory>

#include "rdl/mesh.hpp"

namespace rdl {

/// Precomputed FEM operators for a simplicial mesh: lumped mass, full-space
/// isotropic stiffness, the per-element deformation-gradient operator and the
/// least-squares (Poisson) reconstruction that inverts it on centroid-pinned
/// positions. Immutable after assembly.
struct FemOperators {
  int dim = 2;
  double density = 1.0;
  double young = 1e5;
  double poisson = 0.48;
  double lame_mu = 0.0;
  double lame_lambda = 0.0;
  double total_mass = 0.0;
  double avg_element_size = 0.0;  // l = (vol/P)^(1/dim)

  Eigen::VectorXd vertex_mass;     // V, lumped
  Eigen::VectorXd element_volume;  // P
  Eigen::VectorXd rest_centroid;   // dim, mass-weighted

  Eigen::SparseMatrix<double> grad_op;         // (P*d*d) x (V*d)
  Eigen::SparseMatrix<double> stiffness_full;  // (V*d) x (V*d)

  // Per-element Poisson columns: N^{-1} G_j^T W_j, each (V*d) x (d*d).
  // Reconstruction from gradients is x = sum_j cols[j] * vec(F_j), giving
  // positions with zero mass-weighted centroid.
  std::vector<Eigen::MatrixXd> poisson_cols;
  Eigen::VectorXd rest_pinned;  // V*d, rest positions minus centroid

  int numVertices() const { return static_cast<int>(vertex_mass.size()); }
  int numElements() const { return static_cast<int>(element_volume.size()); }

  /// vec(F) per element, column-major d x d blocks, stacked: (P*d*d).
  Eigen::VectorXd applyGradOp(const Eigen::VectorXd& positions) const;

  /// Least-squares positions from stacked per-element gradients; zero
  /// mass-weighted centroid.
  Eigen::VectorXd poissonReconstructPinned(const Eigen::VectorXd& vecF) const;
};

struct AssemblyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::shared_ptr<FemOperators> assembleFem(const VolumetricMesh& mesh, double density,
                                          double young, double poisson);

/// Positions whose element gradients best match F (P stacked d x d blocks,
/// column-major), translated so the mass centroid equals `centroid`.
Eigen::VectorXd reconstructFromGradients(const FemOperators& ops,
                                         const Eigen::VectorXd& vecF,
                                         const Eigen::VectorXd& centroid);

}  // namespace rdl

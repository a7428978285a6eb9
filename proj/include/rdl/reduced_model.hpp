#pragma once

#include <Eigen/Dense>
#include <functional>
#include <json.hpp>
#include <memory>
#include <stdexcept>
#include <vector>

#include "rdl/fem.hpp"
#include "rdl/mesh.hpp"
#include "rdl/rotation.hpp"

namespace rdl {

enum class ModelVariant { RS, LMA, StVK };

enum class EvalMode { Full, Cubature };

/// One timestep's reduced state: local deformation weights u, global
/// translation c, global rotation coordinates w (scalar in 2D, vector in 3D).
struct ReducedConfig {
  Eigen::VectorXd u;
  Eigen::VectorXd c;
  Eigen::VectorXd w;

  int size() const { return static_cast<int>(u.size() + c.size() + w.size()); }
  Eigen::VectorXd stacked() const;
  static ReducedConfig zero(int r, int dim);
  static ReducedConfig fromStacked(const Eigen::VectorXd& q, int r, int dim);
  bool finite() const;
};

struct Cubature {
  std::vector<int> items;     // element (or surface patch) indices
  Eigen::VectorXd weights;    // same length, nonnegative
  double training_error = 0;  // relative, on the training set
  bool saturated = false;     // target unreachable, full set returned

  bool empty() const { return items.empty(); }
};

struct PrecomputeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Reduced kinematic model. The RS variant stores per-element
/// rotation/stretch bases; the linear variants store vertex-displacement
/// bases. Immutable after precompute; evaluation entry points are pure.
struct RsModel {
  ModelVariant variant = ModelVariant::RS;
  int dim = 2;
  int r = 0;

  std::shared_ptr<const FemOperators> fem;

  // RS variant: rows are per-element (tau, S - I) coordinates,
  // rot_dim + d(d+1)/2 per element. Linear variants: (V*d) x r vertex bases.
  Eigen::MatrixXd bases;
  Eigen::VectorXd stiffness_eigs;  // r, reduced stiffness is diag(eigs)

  // StVK variant: per-element displacement-gradient maps, (d*d) x r each,
  // rows of grad_op * bases. Cached so the quartic potential never touches
  // full vertex space.
  std::vector<Eigen::MatrixXd> stvk_grad;

  Cubature kinetic_cubature;
  // RS variant: exact linearized reconstruction operator (V*d) x r, the sum
  // over all elements of poisson_cols[j] times the element's linear RS map.
  // Cubature mode applies it exactly and approximates only the nonlinear
  // remainder, which keeps u = 0 exact and makes small cubature sets viable
  // at desk-scale element counts.
  Eigen::MatrixXd linear_recon;

  int rotDimLocal() const { return rotDim(dim); }
  int rsPerElement() const { return rotDimLocal() + dim * (dim + 1) / 2; }
  int numQ() const { return r + dim + rotDimLocal(); }
};

/// Per-element RS quantities at a given u, shared by value/derivative paths.
struct RsElementState {
  RotationExp rot;     // exp(tau) with requested derivative order
  Eigen::MatrixXd S;   // d x d stretch, I + sym part
  Eigen::VectorXd vecF;  // d*d, vec(R*S) column-major
};

std::shared_ptr<RsModel> buildRsBases(const VolumetricMesh& mesh,
                                      std::shared_ptr<const FemOperators> fem, int r);

std::shared_ptr<RsModel> buildLinearModel(const VolumetricMesh& mesh,
                                          std::shared_ptr<const FemOperators> fem, int r,
                                          ModelVariant variant);

/// World-space vertex positions (V*d) for reduced state q.
Eigen::VectorXd reconstruct(const RsModel& model, const ReducedConfig& q,
                            EvalMode mode = EvalMode::Full);

/// Exact Jacobian d(positions)/dq, (V*d) x (r + dim + rot_dim), same mode as
/// reconstruct. Column order: u, c, w.
Eigen::MatrixXd jacobian(const RsModel& model, const ReducedConfig& q,
                         EvalMode mode = EvalMode::Full);

/// z^T * d^2(positions)/dq dq as an nq x nq matrix, for a fixed left vector z
/// of length V*d. The dense third-order tensor is never materialized.
Eigen::MatrixXd hessContractLeft(const RsModel& model, const ReducedConfig& q,
                                 const Eigen::VectorXd& z,
                                 EvalMode mode = EvalMode::Full);

/// d^2(positions)/dq dq contracted with two direction vectors (length nq),
/// returning a V*d vector.
Eigen::VectorXd hessianQuadVec(const RsModel& model, const ReducedConfig& q,
                               const Eigen::VectorXd& d1, const Eigen::VectorXd& d2,
                               EvalMode mode = EvalMode::Full);

/// Elastic potential in reduced coordinates: value, gradient, Hessian w.r.t.
/// u. Quadratic for RS/LMA, quartic polynomial for StVK.
struct PotentialEval {
  double value = 0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};
PotentialEval potential(const RsModel& model, const Eigen::VectorXd& u,
                        int order = 2);

/// Gauss-distributed training poses; per-mode std dev proportional to
/// 1/sqrt(lambda_k), scaled so mode 1 has RMS vertex displacement
/// amplitude * l. Deterministic for a fixed seed.
std::vector<Eigen::VectorXd> samplePoses(const RsModel& model, int count,
                                         double amplitude, unsigned seed);

/// Greedy element selection with NNLS weights over the pinned local
/// reconstruction x(u) - x(0); stops at relative training error
/// <= target_rel_err. Stores the result on the model.
Cubature trainKineticCubature(RsModel& model, const std::vector<Eigen::VectorXd>& samples,
                              double target_rel_err);

/// Generic greedy-NNLS cubature trainer. `column(i)` stacks item i's
/// contribution over all training samples; `target` is the stacked full sum.
/// Errors are reported relative to `norm_scale` when positive, otherwise to
/// the target norm.
Cubature trainCubatureGreedy(int n_items, const Eigen::VectorXd& target,
                             const std::function<Eigen::VectorXd(int)>& column,
                             double target_rel_err, int max_items = 0,
                             double norm_scale = 0);

nlohmann::json modelToJson(const RsModel& model);
std::shared_ptr<RsModel> modelFromJson(const nlohmann::json& j,
                                       std::shared_ptr<const FemOperators> fem);

}  // namespace rdl

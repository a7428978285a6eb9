#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "rdl/dmp.hpp"
#include "rdl/environment.hpp"
#include "rdl/reduced_model.hpp"

namespace rdl {

/// Objective weights; defaults follow the standard parameter table, with the
/// length-scaled entries (c_env, gamma, eps1) derived from the average
/// element size l.
struct WeightSet {
  double c_coll = 1e2;
  double c_self = 1e2;
  double c_env = 1e1;      // scaled by 1/l^2 in defaults(l)
  double c_drag = 1e3;
  double c_reg = 1e-3;
  double c_shuffle = 1e-1;
  double c_dmp = 1e-3;     // adaptive during optimization

  double c_move = 1e-1;
  double c_turn = 1e-1;
  double c_bal = 1e-2;
  double c_jump = 1e-1;
  double c_key = 1e-1;
  double c_track = 1e-1;

  double gamma = 0;  // log(10)/l
  double eps1 = 0;   // 3l, contact activation distance
  double eps2 = 0.01;
  double mu = 0.7;

  static WeightSet defaults(double l);
};

/// Spacetime trajectory state shared by the optimizer, simulator and IO.
struct Trajectory {
  double dt = 0.05;
  std::vector<ReducedConfig> configs;
  std::vector<std::vector<int>> active;    // per timestep active contact vertices
  std::vector<Eigen::MatrixXd> forces;     // per timestep, n_active x dim
  std::optional<DmpWeights> dmp;           // r channels when present

  int K() const { return static_cast<int>(configs.size()); }
};

/// One task objective; composite objectives are lists of these.
struct TaskObjective {
  std::string kind;  // move | turn | balance | jump | track | keyframe
  Eigen::VectorXd v_c;               // move/jump target velocity, local frame
  double theta = 0;                  // turn rate (rad/s)
  Eigen::VectorXd d;                 // balance direction / turn axis (unit)
  double h = 0;                      // jump target altitude
  Eigen::VectorXd up;                // jump altitude direction (unit)
  std::vector<ReducedConfig> reference;   // track targets per frame
  std::vector<Eigen::VectorXd> key_u;     // keyframe deformation targets
  std::vector<int> key_t;                 // keyframe timestep indices
  Eigen::VectorXd key_importance;         // diagonal importance, length r
  double weight = -1;                // override; negative = kind default
};

struct EnergyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Per-timestep reconstruction cache reused by every term.
struct FrameCache {
  ReducedConfig q;
  Eigen::VectorXd x;   // V*dim world positions
  Eigen::MatrixXd J;   // (V*dim) x nq
  EvalMode mode = EvalMode::Full;
};
FrameCache makeFrameCache(const RsModel& model, const ReducedConfig& q,
                          EvalMode mode = EvalMode::Full);

/// Block-tridiagonal accumulation of value, gradient, and PSD approximate
/// Hessian over the K*nq trajectory variables.
struct EnergyAccum {
  double value = 0;
  int nq = 0;
  std::vector<Eigen::VectorXd> grad;     // K blocks, nq each
  std::vector<Eigen::MatrixXd> diag;     // K blocks, nq x nq
  std::vector<Eigen::MatrixXd> offdiag;  // K-1 blocks, (i, i+1)

  void init(int K, int nq_in);
  // Scatter a term spanning 1, 2, or 3 consecutive frames starting at i.
  // The 3-frame form expects zero corner blocks (grad 3*nq, hess tridiagonal).
  void add1(int i, const Eigen::VectorXd& g, const Eigen::MatrixXd& h);
  void add2(int i, const Eigen::VectorXd& g, const Eigen::MatrixXd& h);
  void add3(int i, const Eigen::VectorXd& g, const Eigen::MatrixXd& h);
  Eigen::VectorXd stackedGrad() const;
  Eigen::MatrixXd denseHess() const;
};

/// Closed-form minimization of
///   1/2||eom - f||^2 + c_reg/2 ||f||^2 + c_dmp/2 ||f - dmp||^2
/// over the internal force f.
struct Elimination {
  double value = 0;
  Eigen::VectorXd f_int;
  double a = 0;    // quadratic weight on the eom residual after elimination
  double w12 = 0;  // cross weight between eom residual and dmp target
};
Elimination eliminateInternalForce(const Eigen::VectorXd& eom_u,
                                   const Eigen::VectorXd& dmp_target, double c_reg,
                                   double c_dmp);

/// Surface patches for the fluid drag model, optionally cubature-compressed.
struct DragModel {
  Eigen::MatrixXi patches;  // S x dim facets, outward oriented
  Cubature cubature;        // empty = full surface sum
};

/// Drag work scalar C_drag * sum max(N.U, 0)^2 (N.P) / (|N|^2 + 1e-6) over
/// surface patches. N (area-weighted normal) and P (barycenter) come from the
/// next frame; U = (P_next - P_prev)/dt - v_fluid. grad is exact over the
/// stacked variables (q_prev, q_next); h21/h22 are the position-space second
/// derivatives chained through the Jacobians only (the reconstruction
/// curvature against grad_x_next is applied by the physics term).
struct DragEval {
  double value = 0;
  Eigen::VectorXd grad;         // 2*nq (q_prev, q_next)
  Eigen::VectorXd grad_x_next;  // V*dim, dW/dx at the next frame
  Eigen::MatrixXd h21;          // nq x nq, J_next' Wxx_np J_prev
  Eigen::MatrixXd h22;          // nq x nq, J_next' Wxx_nn J_next
};
DragEval dragWork(const RsModel& model, const FrameCache& prev, const FrameCache& next,
                  const DragModel& drag, const EnvironmentField& field, double dt,
                  double c_drag);

/// Greedy-NNLS cubature over surface patches against the full drag sum on
/// sampled pose pairs.
Cubature trainDragCubature(const RsModel& model, const Eigen::MatrixXi& patches,
                           const EnvironmentField& field, double dt, double c_drag,
                           const std::vector<Eigen::VectorXd>& samples,
                           double target_rel_err);

/// Physics term for one interior timestep: EOM residual with internal-force
/// elimination (and the DMP coupling), plus drag in fluid scenes. Spreads
/// over frames (i-1, i, i+1).
struct PhysEval {
  double value = 0;
  Eigen::VectorXd grad;   // 3*nq
  Eigen::MatrixXd hess;   // 3*nq x 3*nq PSD majorizer, corner blocks zero
  Eigen::VectorXd f_int;  // r, optimal internal force
  Eigen::VectorXd rho;    // nq EOM residual at f_int = 0
};
PhysEval ePhys(const RsModel& model, const FrameCache& f0, const FrameCache& f1,
               const FrameCache& f2, const Eigen::VectorXd& f_ext,
               const EnvironmentField* field, const DragModel* drag, double dt,
               const Eigen::VectorXd& dmp_target, const Eigen::VectorXd& gravity,
               const WeightSet& w);

/// Quadratic restriction of (ePhys + contact-integrity) to the stacked
/// active contact forces: 1/2 f'Qf + b'f + c0.
struct ContactQuadratic {
  Eigen::MatrixXd Q;
  Eigen::VectorXd b;
  double c0 = 0;
  Eigen::MatrixXd normals;  // n_active x dim unit contact normals
};
ContactQuadratic contactQuadratic(const RsModel& model, const FrameCache& f0,
                                  const FrameCache& f1, const FrameCache& f2,
                                  const EnvironmentField& field,
                                  const std::vector<int>& active, double dt,
                                  const Eigen::VectorXd& dmp_target,
                                  const Eigen::VectorXd& gravity, const WeightSet& w);

/// Static-obstacle penetration penalty at one frame.
struct TermEval {
  double value = 0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;  // PSD approximation
};
TermEval eColl(const RsModel& model, const FrameCache& f, const EnvironmentField& field,
               const WeightSet& w);

/// Self-collision penalty in the local frame; gradient w.r.t. u only.
TermEval eSelf(const RsModel& model, const Eigen::VectorXd& u,
               const CollisionReport& report, const WeightSet& w);

/// Contact-integrity penalty over active vertices, variables (q_{i-1}, q_i).
/// normals are the frozen per-vertex contact normals (rows), forces the
/// current contact forces (rows).
TermEval eEnvCio(const RsModel& model, const FrameCache& prev, const FrameCache& cur,
                 const EnvironmentField& field, const std::vector<int>& active,
                 const Eigen::MatrixXd& normals, const Eigen::MatrixXd& forces,
                 const WeightSet& w);

/// Tangential-slip penalty attenuated by obstacle distance, variables
/// (q_{i-1}, q_i), same frozen normals as eEnvCio.
TermEval eShuffle(const RsModel& model, const FrameCache& prev, const FrameCache& cur,
                  const EnvironmentField& field, const std::vector<int>& active,
                  const Eigen::MatrixXd& normals, const WeightSet& w);

/// Controller-mismatch energy c_dmp/2 sum_k |target_k - dmp(times_k)|^2 with
/// gradients w.r.t. both the targets and the controller parameters.
struct DmpEnergy {
  double value = 0;
  Eigen::MatrixXd d_targets;  // T x C
  double d_tau = 0;
  Eigen::MatrixXd d_alpha, d_beta, d_mu;  // C x N
};
DmpEnergy eDmp(const Eigen::MatrixXd& targets, const Eigen::VectorXd& times,
               const DmpWeights& dmp, double c_dmp);

/// Task objectives accumulated over the whole trajectory.
void addTaskEnergy(EnergyAccum& acc, const TaskObjective& task, const RsModel& model,
                   const std::vector<FrameCache>& frames, double dt, const WeightSet& w);

}  // namespace rdl

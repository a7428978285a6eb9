#pragma once

#include <iosfwd>

#include "rdl/contact_qp.hpp"
#include "rdl/dmp.hpp"
#include "rdl/energy.hpp"

namespace rdl {

struct StallError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything that defines one synthesis problem. All handles are immutable
/// during a run.
struct LocoProblem {
  std::shared_ptr<const RsModel> model;
  std::shared_ptr<const VolumetricMesh> mesh;  // enables the self-collision term
  std::shared_ptr<const EnvironmentField> field;
  std::shared_ptr<const DragModel> drag;       // fluid scenes
  std::vector<TaskObjective> tasks;
  WeightSet weights;
  Eigen::VectorXd gravity;

  bool groundContact() const {
    return field && field->env_type == EnvType::Ground;
  }
};

struct EnergyBreakdown {
  double total = 0;
  double phys = 0, coll = 0, self = 0, env = 0, shuffle = 0, task = 0;
  double eom = 0;         // sum of EOM violations (adaptive-penalty A)
  double dmp_misfit = 0;  // sum |f_int - controller|^2 (adaptive-penalty B)
};

struct Evaluation {
  EnergyAccum acc;
  EnergyBreakdown terms;
  Eigen::MatrixXd f_int;  // (K-2) x r optimal internal forces
  Eigen::MatrixXd rho;    // (K-2) x nq EOM residuals at f_int = 0
  bool finite = true;
  std::string bad_term;   // first term group that produced a non-finite value
};

std::vector<FrameCache> makeFrames(const RsModel& model, const Trajectory& traj,
                                   int threads = 0);

/// Unit contact normals (field gradient) at the active vertices of one frame.
Eigen::MatrixXd contactNormals(const RsModel& model, const FrameCache& f,
                               const EnvironmentField& field,
                               const std::vector<int>& active);

/// Full objective over the trajectory: value, exact gradient, and the PSD
/// block-tridiagonal Hessian approximation. c_dmp overrides weights.c_dmp;
/// the controller coupling is dropped when traj.dmp is absent. When
/// frozen_normals is given (one n_active x dim block per timestep) it
/// replaces the live contact normals, which makes the objective an exact
/// function of the configs for finite-difference checks.
Evaluation evaluate(const LocoProblem& p, const Trajectory& traj,
                    const std::vector<FrameCache>& frames, double c_dmp,
                    int threads = 0,
                    const std::vector<Eigen::MatrixXd>* frozen_normals = nullptr);

/// Solves (A + d I) x = rhs for a symmetric block-tridiagonal A by block
/// Cholesky forward/backward sweeps, O(K) block factorizations. Returns false
/// when a shifted pivot block is not positive definite.
bool solveBlockTridiagonal(const std::vector<Eigen::MatrixXd>& diag,
                           const std::vector<Eigen::MatrixXd>& offdiag,
                           const Eigen::VectorXd& rhs, double d,
                           Eigen::VectorXd& out);

/// Adaptive controller-coupling weight: x2.1 when the control forces do not
/// match the controller (B > 0.1 A), x0.5 when they match well (B < 0.01 A),
/// unchanged in the dead band.
double updateCdmp(double c_dmp, double A, double B);

struct HistoryRow {
  int iter = 0;
  double value = 0, grad_norm = 0, d = 0, c_dmp = 0;
  int candidates = 0, active_count = 0;
  double phys = 0, coll = 0, self = 0, env = 0, shuffle = 0, task = 0;
  double wall_ms = 0;  // cumulative
};
void writeHistoryCsv(const std::vector<HistoryRow>& rows, std::ostream& os);

struct OptimizerState {
  Trajectory traj;
  double d = 1e-4;
  int iter = 0;
  double c_dmp = 1e-3;
  CandidateSet candidates;
  std::vector<HistoryRow> history;
  double value = 0, grad_norm = 0;
  double initial_value = 0, initial_grad_norm = 0;
  bool converged = false, stalled = false;
  std::string stop_reason;
};

struct OptimizeOptions {
  int K = 60;
  double dt = 0.05;
  int max_iters = 10000;
  double grad_rel_tol = 1e-3;  // on |grad| relative to the first iterate
  double d0 = 1e-4;
  double d_max = 1e12;
  bool use_dmp = true;
  DmpKind dmp_kind = DmpKind::Periodic;
  int neurons = 5;
  int dmp_interval = 10;       // iterations between controller refits
  int dmp_lbfgs_iters = 1000;
  double c_dmp0 = 1e-3;
  unsigned seed = 0;
  bool random_init = false;    // per-timestep random poses instead of rest
  double random_amplitude = 0.1;
  int threads = 0;             // 0 = hardware concurrency
  int lbfgs_round = 100;       // reference: iterations between contact refreshes
  double cone_penalty = 1e4;   // reference: friction-cone violation weight
};

/// One damped-Newton update of the trajectory: solve, test, x10 on rejection,
/// /3 on acceptance; accepts only on strict decrease. Mutates traj, frames,
/// d, and value. Throws StallError once d exceeds opts.d_max.
bool lmStep(const LocoProblem& p, const OptimizeOptions& opts, OptimizerState& st,
            const Evaluation& ev, std::vector<FrameCache>& frames);

/// The full alternating loop: damped Newton over the configs, per-timestep
/// cone solves for the contact forces, periodic multi-start controller fits,
/// the adaptive coupling weight, and contact-set refresh. Stops at the
/// gradient tolerance or max_iters; a stall ends the run gracefully with the
/// partial result preserved.
OptimizerState optimize(const LocoProblem& p, const OptimizeOptions& opts);

/// Variable layout of the monolithic reference objective: stacked configs,
/// then the active contact forces, then the controller parameters.
struct MonoLayout {
  int K = 0, nq = 0, r = 0, dim = 0;
  double dt = 0.05;
  std::vector<std::vector<int>> active;  // fixed within one round
  std::vector<Eigen::MatrixXd> normals;  // frozen contact normals
  bool with_dmp = false;
  int neurons = 5;
  DmpKind kind = DmpKind::Periodic;
  double c_dmp = 0;
  double cone_penalty = 1e4;

  int qSize() const { return K * nq; }
  int fSize() const;
  int wSize() const { return with_dmp ? 1 + 3 * r * neurons : 0; }
  int size() const { return qSize() + fSize() + wSize(); }
  Eigen::VectorXd pack(const Trajectory& traj) const;
  void unpack(const Eigen::VectorXd& z, Trajectory& traj) const;
};

/// Monolithic objective (trajectory, penalty-constrained contact forces,
/// controller parameters) with its exact gradient; drives the reference
/// solver and the finite-difference oracle.
double monolithicEval(const LocoProblem& p, const MonoLayout& layout,
                      const Eigen::VectorXd& z, Eigen::VectorXd* grad);

/// Reference solver: limited-memory BFGS over all variables at once, contact
/// sets refreshed between rounds. Benchmarking baseline only.
OptimizerState optimizeLbfgsReference(const LocoProblem& p,
                                      const OptimizeOptions& opts);

}  // namespace rdl

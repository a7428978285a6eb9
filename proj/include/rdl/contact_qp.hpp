#pragma once

#include <Eigen/Dense>

#include "rdl/energy.hpp"

namespace rdl {

struct QpError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One timestep's contact-force subproblem: minimize 1/2 f'Qf + b'f + c0 over
/// the stacked world-space forces of the active vertices, each constrained to
/// its friction cone |f_par| <= mu * f_perp.
struct ContactProblem {
  Eigen::MatrixXd Q;        // (n*dim) x (n*dim), positive definite
  Eigen::VectorXd b;
  double c0 = 0;
  Eigen::MatrixXd normals;  // n x dim unit contact normals
  double mu = 0.7;
  int dim = 2;

  int contacts() const { return static_cast<int>(normals.rows()); }
};

ContactProblem assembleContactProblem(const RsModel& model, const FrameCache& f0,
                                      const FrameCache& f1, const FrameCache& f2,
                                      const EnvironmentField& field,
                                      const std::vector<int>& active, double dt,
                                      const Eigen::VectorXd& dmp_target,
                                      const Eigen::VectorXd& gravity,
                                      const WeightSet& w);

struct ConeSolution {
  Eigen::MatrixXd forces;   // n x dim, cone-feasible
  double kkt = 0;           // duality-gap bound at termination
  int iters = 0;            // total Newton iterations
  double objective = 0;     // 1/2 f'Qf + b'f (without c0)
};

/// Primal log-barrier interior-point solve over the product of friction
/// cones. `warm` (n x dim) is pushed strictly inside the cone and used as the
/// starting point; pass nullptr for a cold start.
ConeSolution solveConeQp(const ContactProblem& problem,
                         const Eigen::MatrixXd* warm = nullptr);

/// Contact-set refresh over the whole trajectory: vertex j at timestep i is
/// excluded iff dist(v^j(q_i)) > eps1 and |f_ij| <= eps2 * max |f|; forces of
/// persisting vertices are kept, newly included vertices start at zero.
void updateActiveSet(const RsModel& model, Trajectory& traj,
                     const EnvironmentField& field, double eps1, double eps2);

}  // namespace rdl

#pragma once

#include "rdl/optimizer.hpp"

namespace rdl {

struct SimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StepOptions {
  double grad_tol = 1e-8;       // on the per-step objective gradient
  int max_newton = 100;         // Newton iterations per attempt
  int max_substep_levels = 4;   // dt halvings before giving up
  bool contact_penalty = false; // stiff ground penalty inside the step
};

/// One implicit step of the position-based integrator: finds the stationary
/// point of
///   |x(q) - 2 x(q1) + x(q0)|_M^2 / (2 dt^2) + P(u) - f_int'u - f_ext'x
///   - gravity work + drag dissipation
/// by Levenberg-Marquardt on the gradient residual (the drag dissipation can
/// lose positivity for large excursions, so the step is solved as the
/// discrete equation of motion rather than a global minimization). On failure
/// the step is halved (previous state interpolated) up to max_substep_levels,
/// then SimError.
ReducedConfig forwardStep(const LocoProblem& p, const ReducedConfig& q0,
                          const ReducedConfig& q1, const Eigen::VectorXd& f_int,
                          const Eigen::VectorXd& f_ext, double dt,
                          const StepOptions& opts = {});

/// Open-loop playback: iterates forwardStep with the controller output as
/// the internal force, f_int(t) = dmp((i-1) dt) at 0-based frame i.
Trajectory rolloutOpenLoop(const LocoProblem& p, const DmpWeights& dmp,
                           const ReducedConfig& q0, const ReducedConfig& q1,
                           int steps, double dt, const StepOptions& opts = {});

/// One-step feedback tracker: minimizes the physics term of the triple
/// (q0, q1, q) plus c_track/2 (x(q) - x(q_ref))' M (x(q) - x(q_ref)) over q.
/// c_track < 0 uses the weight-set default.
ReducedConfig trackStep(const LocoProblem& p, const ReducedConfig& q0,
                        const ReducedConfig& q1, const ReducedConfig& q_ref,
                        const Eigen::VectorXd& f_ext, double dt,
                        double c_track = -1, const StepOptions& opts = {});

/// Per-frame physics-violation series (length K-2): for each interior frame
/// the physically correct next state is recomputed by forwardStep from
/// (q_{i-1}, q_i) with the trajectory's forces, and the deviation is the
/// vertex-RMS distance normalized by the average element size.
Eigen::VectorXd physicsViolation(const LocoProblem& p, const Trajectory& traj,
                                 double c_dmp = 0, const StepOptions& opts = {});

}  // namespace rdl

#include "rdl/simulation.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

namespace rdl {

namespace {

void parallelFor(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  int nt = std::max(1, std::min(static_cast<int>(std::thread::hardware_concurrency()), n));
  if (nt == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mtx;
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (int t = 0; t < nt; ++t)
    pool.emplace_back([&] {
      try {
        for (int i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mtx);
        if (!err) err = std::current_exception();
        next.store(n);
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

Eigen::VectorXd expandedMass(const RsModel& model) {
  const int dim = model.dim;
  const int V = static_cast<int>(model.fem->vertex_mass.size());
  Eigen::VectorXd m(V * dim);
  for (int v = 0; v < V; ++v)
    m.segment(v * dim, dim).setConstant(model.fem->vertex_mass[v]);
  return m;
}

struct ObjOut {
  double value = 0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

/// Levenberg-Marquardt root-find on the stationarity residual r(q) = grad of
/// the per-step objective, with hess as the (approximate, symmetric) Jacobian.
/// Solving the equations directly keeps convergence limited by the residual's
/// precision rather than the objective value's, which matters for stiff terms.
bool solveStationary(const std::function<ObjOut(const ReducedConfig&)>& fn,
                     ReducedConfig& q, double tol, int max_iters) {
  const int nq = q.size();
  const int r = static_cast<int>(q.u.size());
  const int dim = static_cast<int>(q.c.size());
  ObjOut cur = fn(q);
  if (!cur.grad.allFinite() || !cur.hess.allFinite()) return false;
  double res = cur.grad.norm();
  double lambda = 1e-10;
  for (int it = 0; it < max_iters; ++it) {
    if (res < tol) return true;
    // minimize 1/2 |r + H dq|^2 with Marquardt diagonal damping, which keeps
    // the relative damping uniform across stiff and soft directions
    Eigen::MatrixXd A = cur.hess * cur.hess;
    Eigen::VectorXd damp = A.diagonal().cwiseMax(1e-12 * A.trace() / nq);
    A += lambda * damp.asDiagonal();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    Eigen::VectorXd dir = ldlt.solve(-cur.hess * cur.grad);
    bool accepted = false;
    if (ldlt.info() == Eigen::Success && dir.allFinite()) {
      ReducedConfig qn = ReducedConfig::fromStacked(q.stacked() + dir, r, dim);
      ObjOut nxt = fn(qn);
      if (nxt.grad.allFinite() && nxt.hess.allFinite() &&
          nxt.grad.norm() < res) {
        q = qn;
        cur = std::move(nxt);
        res = cur.grad.norm();
        lambda = std::max(lambda / 3, 1e-14);
        accepted = true;
      }
    }
    if (!accepted) {
      lambda *= 10;
      if (lambda > 1e18) return false;
    }
  }
  return res < tol;
}

/// Damped Newton with Armijo backtracking on a bounded-below step objective.
/// Used for the drag-free phase, where the objective is a proper incremental
/// potential; convergence is best-effort (the residual polish finishes).
void minimizeValue(const std::function<ObjOut(const ReducedConfig&)>& fn,
                   ReducedConfig& q, double tol, int max_iters) {
  const int nq = q.size();
  const int r = static_cast<int>(q.u.size());
  const int dim = static_cast<int>(q.c.size());
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(nq, nq);
  ObjOut cur = fn(q);
  if (!std::isfinite(cur.value) || !cur.grad.allFinite()) return;
  double lambda = 0;
  for (int it = 0; it < max_iters; ++it) {
    if (cur.grad.norm() < tol) return;
    Eigen::MatrixXd H = cur.hess;
    if (lambda > 0)
      H += lambda * std::max(1.0, H.diagonal().cwiseAbs().mean()) * I;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd dir = ldlt.solve(-cur.grad);
    const double slope = cur.grad.dot(dir);
    if (ldlt.info() != Eigen::Success || !dir.allFinite() || slope >= 0) {
      lambda = std::max(1e-8, lambda * 10);
      if (lambda > 1e12) return;
      continue;
    }
    double alpha = 1.0;
    bool stepped = false;
    for (int ls = 0; ls < 40; ++ls) {
      ReducedConfig qn =
          ReducedConfig::fromStacked(q.stacked() + alpha * dir, r, dim);
      ObjOut nxt = fn(qn);
      if (std::isfinite(nxt.value) &&
          nxt.value <= cur.value + 1e-4 * alpha * slope) {
        q = qn;
        cur = std::move(nxt);
        stepped = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!stepped) {
      lambda = std::max(1e-8, lambda * 10);
      if (lambda > 1e12) return;
      continue;
    }
    lambda = lambda < 1e-12 ? 0 : 0.25 * lambda;
  }
}

/// Per-step variational objective of the implicit integrator. drag_scale
/// scales the drag work (0 removes it, 1 is the full model).
ObjOut stepObjective(const LocoProblem& p, const ReducedConfig& q,
                     const Eigen::VectorXd& x0, const FrameCache& f1,
                     const Eigen::VectorXd& mass,
                     const Eigen::VectorXd& f_const,  // gravity + f_ext, V*dim
                     const Eigen::VectorXd& f_int, double dt, bool penalty,
                     double drag_scale) {
  const RsModel& model = *p.model;
  const int r = model.r;
  FrameCache f = makeFrameCache(model, q);
  const Eigen::VectorXd xdd = f.x - 2.0 * f1.x + x0;
  Eigen::VectorXd y = mass.cwiseProduct(xdd) / (dt * dt);

  ObjOut o;
  o.value = 0.5 * xdd.dot(y);
  if (f_const.size()) {
    y -= f_const;
    o.value -= f_const.dot(f.x);
  }
  PotentialEval pot = potential(model, q.u, 2);
  o.value += pot.value;
  if (f_int.size()) o.value -= f_int.dot(q.u);

  DragEval de;
  const bool use_drag = drag_scale > 0 && p.drag && p.field &&
                        p.field->env_type == EnvType::Fluid;
  if (use_drag) {
    de = dragWork(model, f1, f, *p.drag, *p.field, dt,
                  drag_scale * p.weights.c_drag);
    o.value += de.value;
    y += de.grad_x_next;
  }

  o.grad = f.J.transpose() * y;
  o.grad.head(r) += pot.grad;
  if (f_int.size()) o.grad.head(r) -= f_int;
  o.hess = f.J.transpose() * mass.asDiagonal() * f.J / (dt * dt) +
           hessContractLeft(model, q, y);
  o.hess.topLeftCorner(r, r) += pot.hess;
  if (use_drag) o.hess += de.h22;

  if (penalty && p.groundContact()) {
    WeightSet wc = p.weights;
    wc.c_coll *= 100;  // stiff contact penalty inside the step
    TermEval te = eColl(model, f, *p.field, wc);
    o.value += te.value;
    o.grad += te.grad;
    o.hess += te.hess;
  }
  return o;
}

Eigen::VectorXd constantForces(const LocoProblem& p,
                               const Eigen::VectorXd& mass,
                               const Eigen::VectorXd& f_ext) {
  const int dim = p.model->dim;
  Eigen::VectorXd f;
  if (p.gravity.size() == dim) {
    f.resize(mass.size());
    for (int v = 0; v * dim < mass.size(); ++v)
      f.segment(v * dim, dim) = mass[v * dim] * p.gravity;
  }
  if (f_ext.size()) {
    if (!f.size()) f = Eigen::VectorXd::Zero(f_ext.size());
    f += f_ext;
  }
  return f;
}

ReducedConfig stepOnce(const LocoProblem& p, const ReducedConfig& q0,
                       const ReducedConfig& q1, const Eigen::VectorXd& f_int,
                       const Eigen::VectorXd& f_ext, double dt,
                       const StepOptions& opts, int level) {
  const RsModel& model = *p.model;
  const Eigen::VectorXd mass = expandedMass(model);
  const Eigen::VectorXd f_const = constantForces(p, mass, f_ext);
  FrameCache f1 = makeFrameCache(model, q1);
  const Eigen::VectorXd x0 = reconstruct(model, q0);

  auto objAt = [&](double drag_scale) {
    return [&, drag_scale](const ReducedConfig& qq) {
      return stepObjective(p, qq, x0, f1, mass, f_const, f_int, dt,
                           opts.contact_penalty, drag_scale);
    };
  };
  const bool has_drag =
      p.drag && p.field && p.field->env_type == EnvType::Fluid;

  // The drag work is a dissipation but loses positivity once patches leave
  // the near-origin region, so the solve is staged: minimize the bounded
  // drag-free incremental potential first, then track the stationary point
  // as drag is switched on.
  for (const Eigen::VectorXd& start :
       {Eigen::VectorXd(2.0 * q1.stacked() - q0.stacked()), q1.stacked()}) {
    ReducedConfig base = ReducedConfig::fromStacked(start, model.r, model.dim);
    minimizeValue(objAt(0.0), base, opts.grad_tol, opts.max_newton);
    ReducedConfig q = base;
    if (solveStationary(objAt(1.0), q, opts.grad_tol, opts.max_newton))
      return q;
    if (has_drag) {
      q = base;
      bool ok = true;
      for (double s : {0.25, 0.5, 0.75, 1.0}) {
        ok = solveStationary(objAt(s), q, opts.grad_tol, opts.max_newton);
        if (!ok) break;
      }
      if (ok) return q;
    }
  }

  if (level >= opts.max_substep_levels)
    throw SimError("forward step failed to converge after sub-stepping");
  ReducedConfig qm = ReducedConfig::fromStacked(
      0.5 * (q0.stacked() + q1.stacked()), model.r, model.dim);
  ReducedConfig qh = stepOnce(p, qm, q1, f_int, f_ext, dt / 2, opts, level + 1);
  return stepOnce(p, q1, qh, f_int, f_ext, dt / 2, opts, level + 1);
}

}  // namespace

ReducedConfig forwardStep(const LocoProblem& p, const ReducedConfig& q0,
                          const ReducedConfig& q1, const Eigen::VectorXd& f_int,
                          const Eigen::VectorXd& f_ext, double dt,
                          const StepOptions& opts) {
  if (!p.model) throw SimError("simulation needs a model");
  if (dt <= 0) throw SimError("dt must be positive");
  return stepOnce(p, q0, q1, f_int, f_ext, dt, opts, 0);
}

Trajectory rolloutOpenLoop(const LocoProblem& p, const DmpWeights& dmp,
                           const ReducedConfig& q0, const ReducedConfig& q1,
                           int steps, double dt, const StepOptions& opts) {
  if (steps < 3) throw SimError("rollout needs at least 3 frames");
  const int r = p.model->r;
  if (dmp.channels() != r)
    throw SimError("controller channel count does not match model rank");

  Trajectory traj;
  traj.dt = dt;
  traj.configs = {q0, q1};
  traj.dmp = dmp;
  for (int i = 1; i + 1 < steps; ++i) {
    Eigen::VectorXd f_int(r);
    for (int ch = 0; ch < r; ++ch) f_int[ch] = dmpEval(dmp, ch, (i - 1) * dt);
    traj.configs.push_back(forwardStep(p, traj.configs[i - 1], traj.configs[i],
                                       f_int, Eigen::VectorXd(), dt, opts));
  }
  traj.active.assign(steps, {});
  traj.forces.assign(steps, Eigen::MatrixXd(0, p.model->dim));
  return traj;
}

ReducedConfig trackStep(const LocoProblem& p, const ReducedConfig& q0,
                        const ReducedConfig& q1, const ReducedConfig& q_ref,
                        const Eigen::VectorXd& f_ext, double dt, double c_track,
                        const StepOptions& opts) {
  const RsModel& model = *p.model;
  const int nq = model.numQ();
  const double C = c_track >= 0 ? c_track : p.weights.c_track;
  WeightSet w = p.weights;
  w.c_dmp = 0;
  const DragModel* drag =
      (p.field && p.field->env_type == EnvType::Fluid) ? p.drag.get() : nullptr;

  FrameCache fc0 = makeFrameCache(model, q0);
  FrameCache fc1 = makeFrameCache(model, q1);
  const Eigen::VectorXd x_ref = reconstruct(model, q_ref);
  const Eigen::VectorXd mass = expandedMass(model);

  auto fn = [&](const ReducedConfig& q2) {
    FrameCache f2 = makeFrameCache(model, q2);
    PhysEval pe = ePhys(model, fc0, fc1, f2, f_ext, p.field.get(), drag, dt,
                        Eigen::VectorXd(), p.gravity, w);
    Eigen::VectorXd e = f2.x - x_ref;
    Eigen::VectorXd Me = mass.cwiseProduct(e);
    ObjOut o;
    o.value = pe.value + 0.5 * C * e.dot(Me);
    o.grad = pe.grad.tail(nq) + C * f2.J.transpose() * Me;
    // the physics majorizer doubles its end diagonal blocks; halving recovers
    // the plain Gauss-Newton block for the single free frame
    o.hess = 0.5 * pe.hess.bottomRightCorner(nq, nq) +
             C * (f2.J.transpose() * mass.asDiagonal() * f2.J +
                  hessContractLeft(model, q2, Me));
    return o;
  };
  // the objective is a bounded sum of squares: minimize it globally, then
  // polish the stationarity residual (value precision limits Armijo progress
  // near the minimum when the tracking weight is large)
  for (const Eigen::VectorXd& start :
       {Eigen::VectorXd(2.0 * q1.stacked() - q0.stacked()), q1.stacked()}) {
    ReducedConfig q = ReducedConfig::fromStacked(start, model.r, model.dim);
    minimizeValue(fn, q, opts.grad_tol, opts.max_newton);
    if (solveStationary(fn, q, opts.grad_tol, opts.max_newton)) return q;
  }
  throw SimError("tracking step failed to converge");
}

Eigen::VectorXd physicsViolation(const LocoProblem& p, const Trajectory& traj,
                                 double c_dmp, const StepOptions& opts) {
  const RsModel& model = *p.model;
  const int K = traj.K(), dim = model.dim;
  if (K < 3) throw SimError("violation metric needs at least 3 frames");
  const int V = static_cast<int>(model.fem->vertex_mass.size());
  const double l = model.fem->avg_element_size;
  const int T = K - 2;

  std::vector<FrameCache> frames = makeFrames(model, traj);
  WeightSet w = p.weights;
  w.c_dmp = traj.dmp ? c_dmp : 0.0;
  Eigen::MatrixXd D;
  if (traj.dmp) {
    Eigen::VectorXd times(T);
    for (int i = 0; i < T; ++i) times[i] = i * traj.dt;
    D = dmpEvalAll(*traj.dmp, times);
  }
  const DragModel* drag =
      (p.field && p.field->env_type == EnvType::Fluid) ? p.drag.get() : nullptr;

  Eigen::VectorXd out(T);
  parallelFor(T, [&](int idx) {
    const int i = idx + 1;
    Eigen::VectorXd f_ext;
    if (p.groundContact() && !traj.active.empty() && !traj.active[i].empty()) {
      f_ext = Eigen::VectorXd::Zero(V * dim);
      for (size_t j = 0; j < traj.active[i].size(); ++j)
        f_ext.segment(traj.active[i][j] * dim, dim) = traj.forces[i].row(j);
    }
    Eigen::VectorXd dtar =
        traj.dmp ? Eigen::VectorXd(D.row(idx).transpose()) : Eigen::VectorXd();
    PhysEval pe = ePhys(model, frames[i - 1], frames[i], frames[i + 1], f_ext,
                        p.field.get(), drag, traj.dt, dtar, p.gravity, w);
    ReducedConfig qs = forwardStep(p, traj.configs[i - 1], traj.configs[i],
                                   pe.f_int, f_ext, traj.dt, opts);
    out[idx] =
        std::sqrt((frames[i + 1].x - reconstruct(model, qs)).squaredNorm() / V) /
        l;
  });
  return out;
}

}  // namespace rdl

#include "rdl/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <ostream>
#include <thread>

#include "rdl/lbfgs.hpp"

namespace rdl {

namespace {

void parallelFor(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  int nt = threads > 0 ? threads
                       : static_cast<int>(std::thread::hardware_concurrency());
  nt = std::max(1, std::min(nt, n));
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

/// Controller targets for the interior timesteps; interior index idx (0-based
/// frame idx+1) maps to controller time idx * dt.
Eigen::MatrixXd controllerTargets(const DmpWeights& dmp, int T, double dt) {
  Eigen::VectorXd times(T);
  for (int i = 0; i < T; ++i) times[i] = i * dt;
  return dmpEvalAll(dmp, times);
}

Eigen::VectorXd scatterForces(const Trajectory& traj, int i, int V, int dim) {
  if (traj.active[i].empty()) return Eigen::VectorXd();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(V * dim);
  for (size_t j = 0; j < traj.active[i].size(); ++j)
    f.segment(traj.active[i][j] * dim, dim) = traj.forces[i].row(j);
  return f;
}

struct PhysSummary {
  Eigen::MatrixXd f_int;  // (K-2) x r
  double A = 0;           // sum of EOM violations
};

double eomValue(const PhysEval& pe, int r) {
  const Eigen::VectorXd du = pe.rho.head(r) - pe.f_int;
  const Eigen::VectorXd cw = pe.rho.tail(pe.rho.size() - r);
  return 0.5 * du.squaredNorm() + 0.5 * cw.squaredNorm();
}

PhysSummary internalForces(const LocoProblem& p, const Trajectory& traj,
                           const std::vector<FrameCache>& frames, double c_dmp,
                           int threads) {
  const RsModel& model = *p.model;
  const int K = traj.K(), r = model.r, dim = model.dim;
  const int V = static_cast<int>(frames[0].x.size()) / dim;
  const int T = K - 2;
  WeightSet w = p.weights;
  w.c_dmp = traj.dmp ? c_dmp : 0.0;
  Eigen::MatrixXd D;
  if (traj.dmp) D = controllerTargets(*traj.dmp, T, traj.dt);
  const DragModel* drag =
      (p.field && p.field->env_type == EnvType::Fluid) ? p.drag.get() : nullptr;

  PhysSummary out;
  out.f_int.resize(T, r);
  Eigen::VectorXd eom(T);
  parallelFor(T, threads, [&](int idx) {
    const int i = idx + 1;
    Eigen::VectorXd f_ext =
        p.groundContact() ? scatterForces(traj, i, V, dim) : Eigen::VectorXd();
    Eigen::VectorXd dtar =
        traj.dmp ? Eigen::VectorXd(D.row(idx)) : Eigen::VectorXd();
    PhysEval pe = ePhys(model, frames[i - 1], frames[i], frames[i + 1], f_ext,
                        p.field.get(), drag, traj.dt, dtar, p.gravity, w);
    out.f_int.row(idx) = pe.f_int;
    eom[idx] = eomValue(pe, r);
  });
  out.A = eom.sum();
  return out;
}

double controllerMisfit(const Eigen::MatrixXd& targets, const DmpWeights& dmp,
                        double dt) {
  Eigen::MatrixXd D =
      controllerTargets(dmp, static_cast<int>(targets.rows()), dt);
  return (targets - D).squaredNorm();
}

}  // namespace

std::vector<FrameCache> makeFrames(const RsModel& model, const Trajectory& traj,
                                   int threads) {
  std::vector<FrameCache> frames(traj.K());
  parallelFor(traj.K(), threads,
              [&](int i) { frames[i] = makeFrameCache(model, traj.configs[i]); });
  return frames;
}

Eigen::MatrixXd contactNormals(const RsModel& model, const FrameCache& f,
                               const EnvironmentField& field,
                               const std::vector<int>& active) {
  const int dim = model.dim;
  Eigen::MatrixXd N(static_cast<int>(active.size()), dim);
  for (size_t j = 0; j < active.size(); ++j) {
    FieldQuery fq = field.query(f.x.segment(active[j] * dim, dim), 1);
    Eigen::VectorXd n = fq.grad;
    const double len = n.norm();
    if (len > 1e-12) {
      n /= len;
    } else {
      n.setZero();
      n[dim - 1] = 1.0;
    }
    N.row(j) = n;
  }
  return N;
}

Evaluation evaluate(const LocoProblem& p, const Trajectory& traj,
                    const std::vector<FrameCache>& frames, double c_dmp,
                    int threads,
                    const std::vector<Eigen::MatrixXd>* frozen_normals) {
  const RsModel& model = *p.model;
  const int K = traj.K(), nq = model.numQ(), r = model.r, dim = model.dim;
  if (K < 3) throw EnergyError("trajectory needs at least 3 timesteps");
  if (static_cast<int>(frames.size()) != K)
    throw EnergyError("frame cache does not match trajectory length");
  const int V = static_cast<int>(frames[0].x.size()) / dim;
  const int T = K - 2;

  WeightSet w = p.weights;
  const bool with_dmp = traj.dmp.has_value();
  w.c_dmp = with_dmp ? c_dmp : 0.0;
  Eigen::MatrixXd D;
  if (with_dmp) {
    if (traj.dmp->channels() != r)
      throw EnergyError("controller channel count does not match model rank");
    D = controllerTargets(*traj.dmp, T, traj.dt);
  }

  const bool ground = p.groundContact();
  const DragModel* drag =
      (p.field && p.field->env_type == EnvType::Fluid) ? p.drag.get() : nullptr;

  std::vector<PhysEval> phys(T);
  std::vector<TermEval> coll(K), self(K), env(T), shuf(T);
  parallelFor(K, threads, [&](int i) {
    if (ground) coll[i] = eColl(model, frames[i], *p.field, w);
    if (p.mesh)
      self[i] = eSelf(model, frames[i].q.u,
                      detectSelfCollisions(model, *p.mesh, frames[i].q.u), w);
  });
  parallelFor(T, threads, [&](int idx) {
    const int i = idx + 1;
    Eigen::VectorXd f_ext =
        ground ? scatterForces(traj, i, V, dim) : Eigen::VectorXd();
    Eigen::VectorXd dtar =
        with_dmp ? Eigen::VectorXd(D.row(idx)) : Eigen::VectorXd();
    phys[idx] = ePhys(model, frames[i - 1], frames[i], frames[i + 1], f_ext,
                      p.field.get(), drag, traj.dt, dtar, p.gravity, w);
    if (ground && !traj.active[i].empty()) {
      Eigen::MatrixXd nrm = frozen_normals
                                ? (*frozen_normals)[i]
                                : contactNormals(model, frames[i], *p.field,
                                                 traj.active[i]);
      env[idx] = eEnvCio(model, frames[i - 1], frames[i], *p.field,
                         traj.active[i], nrm, traj.forces[i], w);
      shuf[idx] = eShuffle(model, frames[i - 1], frames[i], *p.field,
                           traj.active[i], nrm, w);
    }
  });

  Evaluation out;
  out.acc.init(K, nq);
  out.f_int.resize(T, r);
  out.rho.resize(T, nq);
  for (int idx = 0; idx < T; ++idx) {
    out.acc.add3(idx, phys[idx].grad, phys[idx].hess);
    out.terms.phys += phys[idx].value;
    out.f_int.row(idx) = phys[idx].f_int;
    out.rho.row(idx) = phys[idx].rho;
    out.terms.eom += eomValue(phys[idx], r);
    if (with_dmp)
      out.terms.dmp_misfit +=
          (phys[idx].f_int - Eigen::VectorXd(D.row(idx))).squaredNorm();
    if (env[idx].grad.size()) {
      out.acc.add2(idx, env[idx].grad, env[idx].hess);
      out.terms.env += env[idx].value;
      out.acc.add2(idx, shuf[idx].grad, shuf[idx].hess);
      out.terms.shuffle += shuf[idx].value;
    }
  }
  for (int i = 0; i < K; ++i) {
    if (coll[i].grad.size()) {
      out.acc.add1(i, coll[i].grad, coll[i].hess);
      out.terms.coll += coll[i].value;
    }
    if (self[i].grad.size()) {
      out.acc.add1(i, self[i].grad, self[i].hess);
      out.terms.self += self[i].value;
    }
  }
  out.acc.value = out.terms.phys + out.terms.coll + out.terms.self +
                  out.terms.env + out.terms.shuffle;
  for (const TaskObjective& task : p.tasks)
    addTaskEnergy(out.acc, task, model, frames, traj.dt, w);
  out.terms.task = out.acc.value - (out.terms.phys + out.terms.coll +
                                    out.terms.self + out.terms.env +
                                    out.terms.shuffle);
  out.terms.total = out.acc.value;

  const std::pair<const char*, double> named[] = {
      {"physics", out.terms.phys},        {"collision", out.terms.coll},
      {"self-collision", out.terms.self}, {"contact-integrity", out.terms.env},
      {"shuffle", out.terms.shuffle},     {"task", out.terms.task}};
  for (const auto& [name, value] : named)
    if (!std::isfinite(value)) {
      out.finite = false;
      out.bad_term = name;
      break;
    }
  return out;
}

bool solveBlockTridiagonal(const std::vector<Eigen::MatrixXd>& diag,
                           const std::vector<Eigen::MatrixXd>& offdiag,
                           const Eigen::VectorXd& rhs, double d,
                           Eigen::VectorXd& out) {
  const int K = static_cast<int>(diag.size());
  if (K == 0) return false;
  const int nq = static_cast<int>(diag[0].rows());
  const Eigen::MatrixXd shift = d * Eigen::MatrixXd::Identity(nq, nq);

  std::vector<Eigen::LLT<Eigen::MatrixXd>> fac(K);
  std::vector<Eigen::MatrixXd> W(K > 1 ? K - 1 : 0);  // S_i^{-1} U_i
  std::vector<Eigen::VectorXd> y(K);

  Eigen::MatrixXd S = diag[0] + shift;
  fac[0].compute(S);
  if (fac[0].info() != Eigen::Success) return false;
  y[0] = rhs.segment(0, nq);
  for (int i = 1; i < K; ++i) {
    W[i - 1] = fac[i - 1].solve(offdiag[i - 1]);
    S = diag[i] + shift - offdiag[i - 1].transpose() * W[i - 1];
    fac[i].compute(S);
    if (fac[i].info() != Eigen::Success) return false;
    y[i] = rhs.segment(i * nq, nq) - W[i - 1].transpose() * y[i - 1];
  }
  out.resize(K * nq);
  out.segment((K - 1) * nq, nq) = fac[K - 1].solve(y[K - 1]);
  for (int i = K - 2; i >= 0; --i)
    out.segment(i * nq, nq) =
        fac[i].solve(y[i]) - W[i] * out.segment((i + 1) * nq, nq);
  return true;
}

double updateCdmp(double c_dmp, double A, double B) {
  if (B > 0.1 * A) return 2.1 * c_dmp;
  if (B < 0.01 * A) return 0.5 * c_dmp;
  return c_dmp;
}

void writeHistoryCsv(const std::vector<HistoryRow>& rows, std::ostream& os) {
  os << "iter,objective,phys,coll,self,env,shuffle,task,grad_norm,d,c_dmp,"
        "candidates,active,wall_ms\n";
  for (const HistoryRow& r : rows)
    os << r.iter << ',' << r.value << ',' << r.phys << ',' << r.coll << ','
       << r.self << ',' << r.env << ',' << r.shuffle << ',' << r.task << ','
       << r.grad_norm << ',' << r.d << ',' << r.c_dmp << ',' << r.candidates
       << ',' << r.active_count << ',' << r.wall_ms << '\n';
}

bool lmStep(const LocoProblem& p, const OptimizeOptions& opts, OptimizerState& st,
            const Evaluation& ev, std::vector<FrameCache>& frames) {
  const int K = st.traj.K(), nq = p.model->numQ();
  const Eigen::VectorXd rhs = -ev.acc.stackedGrad();
  while (true) {
    Eigen::VectorXd step;
    if (solveBlockTridiagonal(ev.acc.diag, ev.acc.offdiag, rhs, st.d, step) &&
        step.allFinite()) {
      Trajectory cand = st.traj;
      for (int i = 0; i < K; ++i)
        cand.configs[i] = ReducedConfig::fromStacked(
            st.traj.configs[i].stacked() + step.segment(i * nq, nq),
            p.model->r, p.model->dim);
      std::vector<FrameCache> cf = makeFrames(*p.model, cand, opts.threads);
      Evaluation ce = evaluate(p, cand, cf, st.c_dmp, opts.threads);
      if (ce.finite && ce.terms.total < ev.terms.total) {
        st.traj = std::move(cand);
        frames = std::move(cf);
        st.value = ce.terms.total;
        st.d /= 3.0;
        return true;
      }
    }
    st.d *= 10.0;
    if (st.d > opts.d_max)
      throw StallError("damping exceeded limit without an accepted step");
  }
}

namespace {

/// Per-timestep cone solves, warm-started from the current forces. A timestep
/// whose quadratic is numerically singular keeps its previous forces after a
/// ridge-stabilized retry fails.
void solveContactForces(const LocoProblem& p, Trajectory& traj,
                        const std::vector<FrameCache>& frames, double c_dmp,
                        int threads) {
  const RsModel& model = *p.model;
  const int K = traj.K();
  const int T = K - 2;
  WeightSet w = p.weights;
  w.c_dmp = traj.dmp ? c_dmp : 0.0;
  Eigen::MatrixXd D;
  if (traj.dmp) D = controllerTargets(*traj.dmp, T, traj.dt);

  parallelFor(T, threads, [&](int idx) {
    const int i = idx + 1;
    if (traj.active[i].empty()) return;
    Eigen::VectorXd dtar =
        traj.dmp ? Eigen::VectorXd(D.row(idx)) : Eigen::VectorXd();
    ContactProblem prob = assembleContactProblem(
        model, frames[i - 1], frames[i], frames[i + 1], *p.field,
        traj.active[i], traj.dt, dtar, p.gravity, w);
    Eigen::MatrixXd warm = traj.forces[i];
    const Eigen::MatrixXd* warm_ptr =
        warm.rows() == prob.contacts() ? &warm : nullptr;
    try {
      traj.forces[i] = solveConeQp(prob, warm_ptr).forces;
    } catch (const QpError&) {
      prob.Q += (1e-8 * prob.Q.trace() / prob.Q.rows() + 1e-12) *
                Eigen::MatrixXd::Identity(prob.Q.rows(), prob.Q.cols());
      try {
        traj.forces[i] = solveConeQp(prob, warm_ptr).forces;
      } catch (const QpError&) {
        // keep the previous forces for this timestep
      }
    }
  });
}

void fitController(OptimizerState& st, const Eigen::MatrixXd& targets,
                   const OptimizeOptions& opts) {
  const int best = fitCandidates(st.candidates, targets, st.traj.dt,
                                 opts.dmp_lbfgs_iters);
  const DmpWeights& bw = st.candidates.candidates[best].weights;
  const double new_misfit = controllerMisfit(targets, bw, st.traj.dt);
  if (!st.traj.dmp ||
      controllerMisfit(targets, *st.traj.dmp, st.traj.dt) > new_misfit)
    st.traj.dmp = bw;
}

int activeTotal(const Trajectory& traj) {
  int n = 0;
  for (const auto& a : traj.active) n += static_cast<int>(a.size());
  return n;
}

Trajectory initialTrajectory(const LocoProblem& p, const OptimizeOptions& opts) {
  const int r = p.model->r, dim = p.model->dim;
  Trajectory traj;
  traj.dt = opts.dt;
  traj.configs.assign(opts.K, ReducedConfig::zero(r, dim));
  if (opts.random_init) {
    std::vector<Eigen::VectorXd> poses =
        samplePoses(*p.model, opts.K, opts.random_amplitude, opts.seed);
    for (int i = 0; i < opts.K; ++i) traj.configs[i].u = poses[i];
  }
  traj.active.assign(opts.K, {});
  traj.forces.assign(opts.K, Eigen::MatrixXd(0, dim));
  if (p.groundContact())
    updateActiveSet(*p.model, traj, *p.field, p.weights.eps1, p.weights.eps2);
  return traj;
}

double elapsedMs(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

OptimizerState optimize(const LocoProblem& p, const OptimizeOptions& opts) {
  if (!p.model) throw EnergyError("problem has no model");
  if (opts.K < 3 || opts.dt <= 0)
    throw EnergyError("schedule needs K >= 3 and dt > 0");

  OptimizerState st;
  st.d = opts.d0;
  st.c_dmp = opts.c_dmp0;
  st.traj = initialTrajectory(p, opts);
  if (opts.use_dmp)
    st.candidates =
        initCandidates(opts.dmp_kind, p.model->r, opts.neurons, opts.seed);

  std::vector<FrameCache> frames = makeFrames(*p.model, st.traj, opts.threads);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    for (st.iter = 0; st.iter < opts.max_iters; ++st.iter) {
      Evaluation ev = evaluate(p, st.traj, frames, st.c_dmp, opts.threads);
      if (!ev.finite) throw EnergyError("non-finite value in " + ev.bad_term);
      st.value = ev.terms.total;
      st.grad_norm = ev.acc.stackedGrad().norm();
      if (st.iter == 0) {
        st.initial_value = st.value;
        st.initial_grad_norm = st.grad_norm;
      }
      st.history.push_back({st.iter, st.value, st.grad_norm, st.d, st.c_dmp,
                            static_cast<int>(st.candidates.candidates.size()),
                            activeTotal(st.traj), ev.terms.phys, ev.terms.coll,
                            ev.terms.self, ev.terms.env, ev.terms.shuffle,
                            ev.terms.task, elapsedMs(t0)});
      if (st.grad_norm <= opts.grad_rel_tol * st.initial_grad_norm ||
          st.grad_norm < 1e-12) {
        st.converged = true;
        st.stop_reason = "gradient";
        return st;
      }

      lmStep(p, opts, st, ev, frames);

      if (p.groundContact())
        solveContactForces(p, st.traj, frames, st.c_dmp, opts.threads);

      if (opts.use_dmp) {
        PhysSummary ps =
            internalForces(p, st.traj, frames, st.c_dmp, opts.threads);
        if (st.iter % opts.dmp_interval == 0)
          fitController(st, ps.f_int, opts);
        const double B =
            controllerMisfit(ps.f_int, *st.traj.dmp, st.traj.dt);
        st.c_dmp =
            std::clamp(updateCdmp(st.c_dmp, ps.A, B), 1e-12, 1e12);
      }

      if (p.groundContact())
        updateActiveSet(*p.model, st.traj, *p.field, p.weights.eps1,
                        p.weights.eps2);
    }
    st.stop_reason = "max-iters";
  } catch (const StallError&) {
    st.stalled = true;
    st.stop_reason = "stall";
  }
  return st;
}

int MonoLayout::fSize() const {
  int s = 0;
  for (const auto& a : active) s += static_cast<int>(a.size()) * dim;
  return s;
}

Eigen::VectorXd MonoLayout::pack(const Trajectory& traj) const {
  Eigen::VectorXd z(size());
  int o = 0;
  for (int i = 0; i < K; ++i, o += nq) z.segment(o, nq) = traj.configs[i].stacked();
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < traj.forces[i].rows(); ++j, o += dim)
      z.segment(o, dim) = traj.forces[i].row(j);
  if (with_dmp) {
    const DmpWeights& dw = *traj.dmp;
    z[o++] = dw.tau;
    const int n = r * neurons;
    z.segment(o, n) = Eigen::Map<const Eigen::VectorXd>(dw.alpha.data(), n);
    z.segment(o + n, n) = Eigen::Map<const Eigen::VectorXd>(dw.beta.data(), n);
    z.segment(o + 2 * n, n) = Eigen::Map<const Eigen::VectorXd>(dw.mu.data(), n);
  }
  return z;
}

void MonoLayout::unpack(const Eigen::VectorXd& z, Trajectory& traj) const {
  traj.dt = dt;
  traj.configs.resize(K);
  traj.active = active;
  traj.forces.assign(K, Eigen::MatrixXd(0, dim));
  int o = 0;
  for (int i = 0; i < K; ++i, o += nq)
    traj.configs[i] = ReducedConfig::fromStacked(z.segment(o, nq), r, dim);
  for (int i = 0; i < K; ++i) {
    traj.forces[i].resize(static_cast<int>(active[i].size()), dim);
    for (int j = 0; j < traj.forces[i].rows(); ++j, o += dim)
      traj.forces[i].row(j) = z.segment(o, dim);
  }
  if (with_dmp) {
    DmpWeights dw;
    dw.kind = kind;
    dw.neurons = neurons;
    dw.tau = z[o++];
    const int n = r * neurons;
    dw.alpha = Eigen::Map<const Eigen::MatrixXd>(z.data() + o, r, neurons);
    dw.beta = Eigen::Map<const Eigen::MatrixXd>(z.data() + o + n, r, neurons);
    dw.mu = Eigen::Map<const Eigen::MatrixXd>(z.data() + o + 2 * n, r, neurons);
    traj.dmp = dw;
  } else {
    traj.dmp.reset();
  }
}

namespace {

/// C1 friction-cone violation penalty on one force: squared hinge on the
/// negative normal part plus a squared hinge on |f_t|^2 - mu^2 f_n^2.
double conePenalty(const Eigen::VectorXd& f, const Eigen::VectorXd& n, double mu,
                   double weight, Eigen::VectorXd* grad) {
  const double fn = n.dot(f);
  const Eigen::VectorXd ft = f - fn * n;
  double value = 0;
  if (grad) grad->setZero(f.size());
  if (fn < 0) {
    value += weight * fn * fn;
    if (grad) *grad += weight * 2.0 * fn * n;
  }
  const double s = ft.squaredNorm() - mu * mu * fn * fn;
  if (s > 0) {
    value += weight * s * s;
    if (grad) *grad += weight * 2.0 * s * (2.0 * ft - 2.0 * mu * mu * fn * n);
  }
  return value;
}

}  // namespace

double monolithicEval(const LocoProblem& p, const MonoLayout& layout,
                      const Eigen::VectorXd& z, Eigen::VectorXd* grad) {
  const RsModel& model = *p.model;
  const int K = layout.K, nq = layout.nq, r = layout.r, dim = layout.dim;
  Trajectory traj;
  layout.unpack(z, traj);
  std::vector<FrameCache> frames = makeFrames(model, traj);
  Evaluation ev =
      evaluate(p, traj, frames, layout.c_dmp, 0, &layout.normals);
  double value = ev.terms.total;

  const double c_dmp_eff = traj.dmp ? layout.c_dmp : 0.0;
  const double s = 1.0 + p.weights.c_reg + c_dmp_eff;
  const double w12 = -c_dmp_eff / s;
  const double dquad = c_dmp_eff * (p.weights.c_reg + 1.0) / s;
  Eigen::MatrixXd D;
  if (traj.dmp) D = controllerTargets(*traj.dmp, K - 2, layout.dt);

  if (grad) grad->setZero(layout.size());
  if (grad) grad->head(layout.qSize()) = ev.acc.stackedGrad();

  // contact-force block: quadratic restriction gradient plus cone penalty
  int o = layout.qSize();
  const double mu = p.field ? p.field->mu : 0.7;
  for (int i = 1; i + 1 < K; ++i) {
    if (layout.active[i].empty()) continue;
    const int idx = i - 1;
    Eigen::VectorXd rho_bar(nq);
    rho_bar.head(r) =
        ev.rho.row(idx).head(r).transpose() - ev.f_int.row(idx).transpose();
    rho_bar.tail(nq - r) = ev.rho.row(idx).tail(nq - r);
    const Eigen::VectorXd Jrho = frames[i + 1].J * rho_bar;  // V*dim
    for (size_t j = 0; j < layout.active[i].size(); ++j) {
      const int v = layout.active[i][j];
      const Eigen::VectorXd f = traj.forces[i].row(j);
      const Eigen::VectorXd n = layout.normals[i].row(j);
      // contact-integrity weight at the frozen normal, distance live
      const Eigen::VectorXd xc = frames[i].x.segment(v * dim, dim);
      const Eigen::VectorXd xp = frames[i - 1].x.segment(v * dim, dim);
      const double dist = p.field->query(xc, 0).dist;
      const Eigen::VectorXd slip = (xc - xp) - n * n.dot(xc - xp);
      const double k = dist * dist + slip.squaredNorm();
      Eigen::VectorXd gpen;
      value += conePenalty(f, n, mu, layout.cone_penalty, grad ? &gpen : nullptr);
      if (grad) {
        grad->segment(o, dim) = -Jrho.segment(v * dim, dim) +
                                2.0 * p.weights.c_env * k * f + gpen;
      }
      o += dim;
    }
  }

  // controller-parameter block through the eliminated coupling
  if (layout.with_dmp && grad) {
    const int n = r * layout.neurons;
    double g_tau = 0;
    Eigen::MatrixXd g_alpha = Eigen::MatrixXd::Zero(r, layout.neurons);
    Eigen::MatrixXd g_beta = g_alpha, g_mu = g_alpha;
    for (int idx = 0; idx < K - 2; ++idx) {
      for (int ch = 0; ch < r; ++ch) {
        const double gD =
            w12 * ev.rho(idx, ch) + dquad * D(idx, ch);
        DmpChannelGrad dg = dmpEvalGrad(*traj.dmp, ch, idx * layout.dt);
        g_tau += gD * dg.d_tau;
        g_alpha.row(ch) += gD * dg.d_alpha.transpose();
        g_beta.row(ch) += gD * dg.d_beta.transpose();
        g_mu.row(ch) += gD * dg.d_mu.transpose();
      }
    }
    (*grad)[o] = g_tau;
    grad->segment(o + 1, n) = Eigen::Map<Eigen::VectorXd>(g_alpha.data(), n);
    grad->segment(o + 1 + n, n) = Eigen::Map<Eigen::VectorXd>(g_beta.data(), n);
    grad->segment(o + 1 + 2 * n, n) = Eigen::Map<Eigen::VectorXd>(g_mu.data(), n);
  }
  return value;
}

OptimizerState optimizeLbfgsReference(const LocoProblem& p,
                                      const OptimizeOptions& opts) {
  if (!p.model) throw EnergyError("problem has no model");
  const RsModel& model = *p.model;
  OptimizerState st;
  st.c_dmp = opts.c_dmp0;
  st.traj = initialTrajectory(p, opts);
  if (opts.use_dmp)
    st.traj.dmp = initWeights(opts.dmp_kind, model.r, opts.neurons,
                              2.0 * M_PI / 1.0, opts.seed);

  const auto t0 = std::chrono::steady_clock::now();
  int total_iters = 0;
  bool first = true;
  while (total_iters < opts.max_iters) {
    MonoLayout layout;
    layout.K = st.traj.K();
    layout.nq = model.numQ();
    layout.r = model.r;
    layout.dim = model.dim;
    layout.dt = st.traj.dt;
    layout.active = st.traj.active;
    layout.normals.resize(layout.K);
    if (p.groundContact()) {
      std::vector<FrameCache> frames = makeFrames(model, st.traj, opts.threads);
      for (int i = 0; i < layout.K; ++i)
        layout.normals[i] =
            contactNormals(model, frames[i], *p.field, st.traj.active[i]);
    }
    layout.with_dmp = st.traj.dmp.has_value();
    layout.neurons = opts.neurons;
    layout.kind = opts.dmp_kind;
    layout.c_dmp = st.c_dmp;
    layout.cone_penalty = opts.cone_penalty;

    Eigen::VectorXd z = layout.pack(st.traj);
    if (first) {
      Eigen::VectorXd g0;
      st.initial_value = monolithicEval(p, layout, z, &g0);
      st.initial_grad_norm = g0.norm();
      st.value = st.initial_value;
      st.grad_norm = st.initial_grad_norm;
      first = false;
      if (st.grad_norm < 1e-12) {
        st.converged = true;
        st.stop_reason = "gradient";
        break;
      }
    }

    LbfgsOptions lo;
    lo.max_iters = std::min(opts.lbfgs_round, opts.max_iters - total_iters);
    lo.grad_tol = 1e-16;
    LbfgsResult res = minimizeLbfgs(
        [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
          return monolithicEval(p, layout, x, &g);
        },
        z, lo);
    layout.unpack(res.x, st.traj);
    total_iters += std::max(res.iters, 1);
    st.iter = total_iters;

    Eigen::VectorXd g;
    st.value = monolithicEval(p, layout, res.x, &g);
    st.grad_norm = g.norm();
    st.history.push_back({st.iter, st.value, st.grad_norm, 0.0, st.c_dmp, 1,
                          activeTotal(st.traj), 0, 0, 0, 0, 0, 0,
                          elapsedMs(t0)});
    if (st.grad_norm <= opts.grad_rel_tol * st.initial_grad_norm) {
      st.converged = true;
      st.stop_reason = "gradient";
      break;
    }
    if (res.iters == 0) {
      st.stop_reason = "plateau";
      break;
    }
    if (p.groundContact())
      updateActiveSet(model, st.traj, *p.field, p.weights.eps1, p.weights.eps2);
  }
  if (st.stop_reason.empty()) st.stop_reason = "max-iters";
  return st;
}

}  // namespace rdl

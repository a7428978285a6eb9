#include "rdl/energy.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "rdl/dual2.hpp"

namespace rdl {

WeightSet WeightSet::defaults(double l) {
  WeightSet w;
  w.c_env = 1e1 / (l * l);
  w.gamma = std::log(10.0) / l;
  w.eps1 = 3.0 * l;
  return w;
}

FrameCache makeFrameCache(const RsModel& model, const ReducedConfig& q, EvalMode mode) {
  FrameCache f;
  f.q = q;
  f.x = reconstruct(model, q, mode);
  f.J = jacobian(model, q, mode);
  f.mode = mode;
  return f;
}

void EnergyAccum::init(int K, int nq_in) {
  value = 0;
  nq = nq_in;
  grad.assign(K, Eigen::VectorXd::Zero(nq));
  diag.assign(K, Eigen::MatrixXd::Zero(nq, nq));
  offdiag.assign(K > 0 ? K - 1 : 0, Eigen::MatrixXd::Zero(nq, nq));
}

void EnergyAccum::add1(int i, const Eigen::VectorXd& g, const Eigen::MatrixXd& h) {
  grad[i] += g;
  diag[i] += h;
}

void EnergyAccum::add2(int i, const Eigen::VectorXd& g, const Eigen::MatrixXd& h) {
  grad[i] += g.head(nq);
  grad[i + 1] += g.tail(nq);
  diag[i] += h.topLeftCorner(nq, nq);
  diag[i + 1] += h.bottomRightCorner(nq, nq);
  offdiag[i] += h.block(0, nq, nq, nq);
}

void EnergyAccum::add3(int i, const Eigen::VectorXd& g, const Eigen::MatrixXd& h) {
  for (int k = 0; k < 3; ++k) {
    grad[i + k] += g.segment(k * nq, nq);
    diag[i + k] += h.block(k * nq, k * nq, nq, nq);
  }
  offdiag[i] += h.block(0, nq, nq, nq);
  offdiag[i + 1] += h.block(nq, 2 * nq, nq, nq);
}

Eigen::VectorXd EnergyAccum::stackedGrad() const {
  Eigen::VectorXd g(nq * static_cast<int>(grad.size()));
  for (size_t i = 0; i < grad.size(); ++i) g.segment(i * nq, nq) = grad[i];
  return g;
}

Eigen::MatrixXd EnergyAccum::denseHess() const {
  const int K = static_cast<int>(diag.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(K * nq, K * nq);
  for (int i = 0; i < K; ++i) {
    h.block(i * nq, i * nq, nq, nq) = diag[i];
    if (i + 1 < K) {
      h.block(i * nq, (i + 1) * nq, nq, nq) = offdiag[i];
      h.block((i + 1) * nq, i * nq, nq, nq) = offdiag[i].transpose();
    }
  }
  return h;
}

Elimination eliminateInternalForce(const Eigen::VectorXd& eom_u,
                                   const Eigen::VectorXd& dmp_target, double c_reg,
                                   double c_dmp) {
  const int r = static_cast<int>(eom_u.size());
  Eigen::VectorXd d = dmp_target.size() > 0 ? dmp_target : Eigen::VectorXd::Zero(r);
  if (d.size() != r) throw EnergyError("dmp target length mismatch");
  Elimination el;
  const double s = 1.0 + c_reg + c_dmp;
  el.a = (c_reg + c_dmp) / s;
  el.w12 = -c_dmp / s;
  el.f_int = (eom_u + c_dmp * d) / s;
  el.value = 0.5 * el.a * eom_u.squaredNorm() + el.w12 * eom_u.dot(d) +
             c_dmp * (c_reg + 1.0) / (2.0 * s) * d.squaredNorm();
  return el;
}

namespace {

Eigen::VectorXd expandedMass(const RsModel& model) {
  const int dim = model.dim, V = model.fem->numVertices();
  Eigen::VectorXd m(V * dim);
  for (int v = 0; v < V; ++v)
    m.segment(v * dim, dim).setConstant(model.fem->vertex_mass[v]);
  return m;
}

/// Per-patch drag work in position space. Variable layout: prev patch
/// vertices first (vertex-major, axis-minor), then the next-frame copies.
template <int D>
Dual2<2 * D * D> dragPatch(const Eigen::VectorXi& pv, const Eigen::VectorXd& xp,
                           const Eigen::VectorXd& xn, const Eigen::VectorXd& v_fluid,
                           double dt) {
  constexpr int NV = 2 * D * D;
  using Du = Dual2<NV>;
  std::array<std::array<Du, D>, D> vp, vn;
  for (int k = 0; k < D; ++k)
    for (int a = 0; a < D; ++a) {
      vp[k][a] = Du::variable(xp[pv[k] * D + a], k * D + a);
      vn[k][a] = Du::variable(xn[pv[k] * D + a], D * D + k * D + a);
    }
  std::array<Du, D> N, U, P;
  for (int a = 0; a < D; ++a) {
    Du pn(0.0), pp(0.0);
    for (int k = 0; k < D; ++k) {
      pn += vn[k][a];
      pp += vp[k][a];
    }
    P[a] = (1.0 / D) * pn;
    U[a] = (1.0 / dt) * (P[a] - (1.0 / D) * pp) - Du(v_fluid[a]);
  }
  if constexpr (D == 2) {
    N[0] = vn[1][1] - vn[0][1];
    N[1] = vn[0][0] - vn[1][0];
  } else {
    std::array<Du, 3> e1, e2;
    for (int a = 0; a < 3; ++a) {
      e1[a] = vn[1][a] - vn[0][a];
      e2[a] = vn[2][a] - vn[0][a];
    }
    N[0] = 0.5 * (e1[1] * e2[2] - e1[2] * e2[1]);
    N[1] = 0.5 * (e1[2] * e2[0] - e1[0] * e2[2]);
    N[2] = 0.5 * (e1[0] * e2[1] - e1[1] * e2[0]);
  }
  Du s(0.0), nn(1e-6), np(0.0);
  for (int a = 0; a < D; ++a) {
    s += N[a] * U[a];
    nn += N[a] * N[a];
    np += N[a] * P[a];
  }
  Du m = relu(s);
  return m * m * np / nn;
}

template <int D>
void accumulateDragPatch(const Eigen::VectorXi& pv, double coef, const FrameCache& prev,
                         const FrameCache& next, const Eigen::VectorXd& v_fluid,
                         double dt, DragEval& out) {
  constexpr int DD = D * D;
  Dual2<2 * DD> w = dragPatch<D>(pv, prev.x, next.x, v_fluid, dt);
  const int nq = static_cast<int>(prev.J.cols());
  Eigen::Matrix<double, DD, Eigen::Dynamic> Jp(DD, nq), Jn(DD, nq);
  for (int k = 0; k < D; ++k)
    for (int a = 0; a < D; ++a) {
      Jp.row(k * D + a) = prev.J.row(pv[k] * D + a);
      Jn.row(k * D + a) = next.J.row(pv[k] * D + a);
      out.grad_x_next[pv[k] * D + a] += coef * w.g[DD + k * D + a];
    }
  out.value += coef * w.v;
  out.grad.head(nq) += coef * (Jp.transpose() * w.g.template head<DD>());
  out.grad.tail(nq) += coef * (Jn.transpose() * w.g.template tail<DD>());
  out.h21 += coef * (Jn.transpose() * w.h.template block<DD, DD>(DD, 0) * Jp);
  out.h22 += coef * (Jn.transpose() * w.h.template block<DD, DD>(DD, DD) * Jn);
}

std::vector<std::pair<int, double>> dragItems(const DragModel& drag) {
  std::vector<std::pair<int, double>> items;
  if (drag.cubature.empty()) {
    for (int p = 0; p < drag.patches.rows(); ++p) items.emplace_back(p, 1.0);
  } else {
    for (size_t i = 0; i < drag.cubature.items.size(); ++i)
      items.emplace_back(drag.cubature.items[i], drag.cubature.weights[i]);
  }
  return items;
}

double dragPatchValue(int dim, const Eigen::VectorXi& pv, const Eigen::VectorXd& xp,
                      const Eigen::VectorXd& xn, const Eigen::VectorXd& v_fluid,
                      double dt) {
  return dim == 2 ? dragPatch<2>(pv, xp, xn, v_fluid, dt).v
                  : dragPatch<3>(pv, xp, xn, v_fluid, dt).v;
}

}  // namespace

DragEval dragWork(const RsModel& model, const FrameCache& prev, const FrameCache& next,
                  const DragModel& drag, const EnvironmentField& field, double dt,
                  double c_drag) {
  const int nq = model.numQ(), Vd = static_cast<int>(prev.x.size());
  DragEval out;
  out.grad = Eigen::VectorXd::Zero(2 * nq);
  out.grad_x_next = Eigen::VectorXd::Zero(Vd);
  out.h21 = Eigen::MatrixXd::Zero(nq, nq);
  out.h22 = Eigen::MatrixXd::Zero(nq, nq);
  Eigen::VectorXd vf = field.fluid_velocity.size() == model.dim
                           ? field.fluid_velocity
                           : Eigen::VectorXd::Zero(model.dim);
  for (auto [p, weight] : dragItems(drag)) {
    Eigen::VectorXi pv = drag.patches.row(p);
    if (model.dim == 2)
      accumulateDragPatch<2>(pv, c_drag * weight, prev, next, vf, dt, out);
    else
      accumulateDragPatch<3>(pv, c_drag * weight, prev, next, vf, dt, out);
  }
  return out;
}

Cubature trainDragCubature(const RsModel& model, const Eigen::MatrixXi& patches,
                           const EnvironmentField& field, double dt, double c_drag,
                           const std::vector<Eigen::VectorXd>& samples,
                           double target_rel_err) {
  const int n_pairs = static_cast<int>(samples.size()) / 2;
  const int S = static_cast<int>(patches.rows());
  if (n_pairs < 1) throw EnergyError("drag cubature needs at least one sample pair");
  Eigen::VectorXd vf = field.fluid_velocity.size() == model.dim
                           ? field.fluid_velocity
                           : Eigen::VectorXd::Zero(model.dim);
  Eigen::MatrixXd vals(n_pairs, S);
  for (int i = 0; i < n_pairs; ++i) {
    ReducedConfig qp = ReducedConfig::zero(model.r, model.dim);
    ReducedConfig qn = qp;
    qp.u = samples[2 * i];
    qn.u = samples[2 * i + 1];
    Eigen::VectorXd xp = reconstruct(model, qp);
    Eigen::VectorXd xn = reconstruct(model, qn);
    for (int p = 0; p < S; ++p)
      vals(i, p) = c_drag * dragPatchValue(model.dim, patches.row(p), xp, xn, vf, dt);
  }
  Eigen::VectorXd target = vals.rowwise().sum();
  return trainCubatureGreedy(
      S, target, [&](int p) { return Eigen::VectorXd(vals.col(p)); }, target_rel_err);
}

PhysEval ePhys(const RsModel& model, const FrameCache& f0, const FrameCache& f1,
               const FrameCache& f2, const Eigen::VectorXd& f_ext,
               const EnvironmentField* field, const DragModel* drag, double dt,
               const Eigen::VectorXd& dmp_target, const Eigen::VectorXd& gravity,
               const WeightSet& w) {
  const int nq = model.numQ(), r = model.r, dim = model.dim;
  const int Vd = static_cast<int>(f2.x.size());
  const Eigen::VectorXd mass = expandedMass(model);

  Eigen::VectorXd y = mass.cwiseProduct(f2.x - 2.0 * f1.x + f0.x) / (dt * dt);
  if (gravity.size() == dim)
    for (int v = 0; v < Vd / dim; ++v)
      y.segment(v * dim, dim) -= model.fem->vertex_mass[v] * gravity;
  if (f_ext.size() == Vd) y -= f_ext;

  DragEval de;
  bool use_drag = drag && field && field->env_type == EnvType::Fluid;
  if (use_drag) {
    de = dragWork(model, f1, f2, *drag, *field, dt, w.c_drag);
    // drag is dissipative: the applied force is minus the work gradient, so
    // advancing patches are pushed back against their motion
    y += de.grad_x_next;
  }

  PotentialEval pot = potential(model, f2.q.u, 2);
  Eigen::VectorXd rho = f2.J.transpose() * y;
  rho.head(r) += pot.grad;

  Elimination el = eliminateInternalForce(rho.head(r), dmp_target, w.c_reg, w.c_dmp);
  Eigen::VectorXd rho_cw = rho.tail(nq - r);

  PhysEval out;
  out.value = el.value + 0.5 * rho_cw.squaredNorm();
  out.f_int = el.f_int;
  out.rho = rho;

  Eigen::MatrixXd B0 = f2.J.transpose() * mass.asDiagonal() * f0.J / (dt * dt);
  Eigen::MatrixXd B1 = -2.0 * f2.J.transpose() * mass.asDiagonal() * f1.J / (dt * dt);
  if (use_drag) B1 += de.h21;
  Eigen::MatrixXd B2 = hessContractLeft(model, f2.q, y, f2.mode) +
                       f2.J.transpose() * mass.asDiagonal() * f2.J / (dt * dt);
  if (use_drag) B2 += de.h22;
  B2.topLeftCorner(r, r) += pot.hess;

  Eigen::VectorXd rho_bar(nq);
  rho_bar.head(r) = el.a * rho.head(r);
  if (dmp_target.size() == r) rho_bar.head(r) += el.w12 * dmp_target;
  rho_bar.tail(nq - r) = rho_cw;

  out.grad.resize(3 * nq);
  out.grad.segment(0, nq) = B0.transpose() * rho_bar;
  out.grad.segment(nq, nq) = B1.transpose() * rho_bar;
  out.grad.segment(2 * nq, nq) = B2.transpose() * rho_bar;

  // Gauss-Newton with the corner blocks dropped; doubling the end diagonal
  // blocks keeps the tridiagonal form an upper bound of the full product.
  Eigen::VectorXd wt(nq);
  wt.head(r).setConstant(el.a);
  wt.tail(nq - r).setOnes();
  Eigen::MatrixXd W0 = wt.asDiagonal() * B0, W1 = wt.asDiagonal() * B1,
                  W2 = wt.asDiagonal() * B2;
  out.hess = Eigen::MatrixXd::Zero(3 * nq, 3 * nq);
  out.hess.block(0, 0, nq, nq) = 2.0 * B0.transpose() * W0;
  out.hess.block(nq, nq, nq, nq) = B1.transpose() * W1;
  out.hess.block(2 * nq, 2 * nq, nq, nq) = 2.0 * B2.transpose() * W2;
  out.hess.block(0, nq, nq, nq) = B0.transpose() * W1;
  out.hess.block(nq, 0, nq, nq) = out.hess.block(0, nq, nq, nq).transpose();
  out.hess.block(nq, 2 * nq, nq, nq) = B1.transpose() * W2;
  out.hess.block(2 * nq, nq, nq, nq) = out.hess.block(nq, 2 * nq, nq, nq).transpose();
  return out;
}

ContactQuadratic contactQuadratic(const RsModel& model, const FrameCache& f0,
                                  const FrameCache& f1, const FrameCache& f2,
                                  const EnvironmentField& field,
                                  const std::vector<int>& active, double dt,
                                  const Eigen::VectorXd& dmp_target,
                                  const Eigen::VectorXd& gravity, const WeightSet& w) {
  const int nq = model.numQ(), r = model.r, dim = model.dim;
  const int n = static_cast<int>(active.size());
  PhysEval pe = ePhys(model, f0, f1, f2, Eigen::VectorXd(), &field, nullptr, dt,
                      dmp_target, gravity, w);
  Elimination el =
      eliminateInternalForce(pe.rho.head(r), dmp_target, w.c_reg, w.c_dmp);

  Eigen::VectorXd wt(nq);
  wt.head(r).setConstant(el.a);
  wt.tail(nq - r).setOnes();
  Eigen::VectorXd rho_bar = wt.cwiseProduct(pe.rho);
  if (dmp_target.size() == r) rho_bar.head(r) += el.w12 * dmp_target;

  // rho(f) = rho0 - G f: each force column enters the EOM through the
  // corresponding Jacobian rows of the frame being solved for.
  Eigen::MatrixXd G(nq, n * dim);
  Eigen::VectorXd k_env(n);
  ContactQuadratic out;
  out.normals.resize(n, dim);
  for (int j = 0; j < n; ++j) {
    const int v = active[j];
    G.middleCols(j * dim, dim) = f2.J.middleRows(v * dim, dim).transpose();
    Eigen::VectorXd xc = f1.x.segment(v * dim, dim);
    Eigen::VectorXd xp = f0.x.segment(v * dim, dim);
    FieldQuery fq = field.query(xc, 1);
    Eigen::VectorXd nrm = fq.grad;
    double len = nrm.norm();
    if (len > 1e-12)
      nrm /= len;
    else {
      nrm.setZero();
      nrm[dim - 1] = 1.0;
    }
    out.normals.row(j) = nrm;
    Eigen::VectorXd slip = (xc - xp) - nrm * nrm.dot(xc - xp);
    k_env[j] = fq.dist * fq.dist + slip.squaredNorm();
  }

  out.Q = G.transpose() * (wt.asDiagonal() * G);
  for (int j = 0; j < n; ++j)
    out.Q.block(j * dim, j * dim, dim, dim) +=
        2.0 * w.c_env * k_env[j] * Eigen::MatrixXd::Identity(dim, dim);
  out.b = -G.transpose() * rho_bar;
  out.c0 = pe.value;
  return out;
}

TermEval eColl(const RsModel& model, const FrameCache& f, const EnvironmentField& field,
               const WeightSet& w) {
  const int nq = model.numQ(), dim = model.dim;
  const int V = static_cast<int>(f.x.size()) / dim;
  TermEval out;
  out.grad = Eigen::VectorXd::Zero(nq);
  out.hess = Eigen::MatrixXd::Zero(nq, nq);
  for (int v = 0; v < V; ++v) {
    FieldQuery fq = field.query(f.x.segment(v * dim, dim), 1);
    if (fq.dist >= 0) continue;
    const double pen = -fq.dist;
    Eigen::RowVectorXd gJ = fq.grad.transpose() * f.J.middleRows(v * dim, dim);
    out.value += 0.5 * w.c_coll * pen * pen;
    out.grad -= w.c_coll * pen * gJ.transpose();
    out.hess += w.c_coll * gJ.transpose() * gJ;
  }
  return out;
}

TermEval eSelf(const RsModel& model, const Eigen::VectorXd& u,
               const CollisionReport& report, const WeightSet& w) {
  const int nq = model.numQ(), r = model.r, dim = model.dim;
  TermEval out;
  out.grad = Eigen::VectorXd::Zero(nq);
  out.hess = Eigen::MatrixXd::Zero(nq, nq);
  if (report.self_pairs.empty()) return out;
  ReducedConfig q = ReducedConfig::zero(r, dim);
  q.u = u;
  Eigen::VectorXd x = reconstruct(model, q);
  Eigen::MatrixXd J = jacobian(model, q);
  for (const SelfPair& pair : report.self_pairs) {
    double s = pair.direction.dot(x.segment(pair.a * dim, dim) -
                                  x.segment(pair.b * dim, dim));
    if (s >= 0) continue;
    Eigen::RowVectorXd t =
        pair.direction.transpose() *
        (J.middleRows(pair.a * dim, dim) - J.middleRows(pair.b * dim, dim));
    Eigen::RowVectorXd tu = t.head(r);  // local-frame term, u rows only
    out.value += 0.5 * w.c_self * s * s;
    out.grad.head(r) += w.c_self * s * tu.transpose();
    out.hess.topLeftCorner(r, r) += w.c_self * tu.transpose() * tu;
  }
  return out;
}

TermEval eEnvCio(const RsModel& model, const FrameCache& prev, const FrameCache& cur,
                 const EnvironmentField& field, const std::vector<int>& active,
                 const Eigen::MatrixXd& normals, const Eigen::MatrixXd& forces,
                 const WeightSet& w) {
  const int nq = model.numQ(), dim = model.dim;
  TermEval out;
  out.grad = Eigen::VectorXd::Zero(2 * nq);
  out.hess = Eigen::MatrixXd::Zero(2 * nq, 2 * nq);
  for (size_t j = 0; j < active.size(); ++j) {
    const int v = active[j];
    const double fsq = forces.row(j).squaredNorm();
    if (fsq == 0) continue;
    Eigen::VectorXd nrm = normals.row(j);
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(dim, dim) - nrm * nrm.transpose();
    Eigen::VectorXd xc = cur.x.segment(v * dim, dim);
    Eigen::VectorXd xp = prev.x.segment(v * dim, dim);
    FieldQuery fq = field.query(xc, 1);
    Eigen::VectorXd slip = P * (xc - xp);
    const double cf = w.c_env * fsq;
    out.value += cf * (fq.dist * fq.dist + slip.squaredNorm());

    Eigen::MatrixXd Jp = prev.J.middleRows(v * dim, dim);
    Eigen::MatrixXd Jc = cur.J.middleRows(v * dim, dim);
    out.grad.head(nq) -= 2.0 * cf * Jp.transpose() * (P * slip);
    out.grad.tail(nq) +=
        2.0 * cf * Jc.transpose() * (fq.dist * fq.grad + P * slip);

    Eigen::MatrixXd PJp = P * Jp, PJc = P * Jc;
    Eigen::RowVectorXd gJc = fq.grad.transpose() * Jc;
    out.hess.topLeftCorner(nq, nq) += 2.0 * cf * PJp.transpose() * PJp;
    out.hess.block(0, nq, nq, nq) -= 2.0 * cf * PJp.transpose() * PJc;
    out.hess.bottomRightCorner(nq, nq) +=
        2.0 * cf * (PJc.transpose() * PJc + gJc.transpose() * gJc);
  }
  out.hess.block(nq, 0, nq, nq) = out.hess.block(0, nq, nq, nq).transpose();
  return out;
}

TermEval eShuffle(const RsModel& model, const FrameCache& prev, const FrameCache& cur,
                  const EnvironmentField& field, const std::vector<int>& active,
                  const Eigen::MatrixXd& normals, const WeightSet& w) {
  const int nq = model.numQ(), dim = model.dim;
  TermEval out;
  out.grad = Eigen::VectorXd::Zero(2 * nq);
  out.hess = Eigen::MatrixXd::Zero(2 * nq, 2 * nq);
  for (size_t j = 0; j < active.size(); ++j) {
    const int v = active[j];
    Eigen::VectorXd nrm = normals.row(j);
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(dim, dim) - nrm * nrm.transpose();
    Eigen::VectorXd xc = cur.x.segment(v * dim, dim);
    Eigen::VectorXd xp = prev.x.segment(v * dim, dim);
    FieldQuery fq = field.query(xc, 1);
    Eigen::VectorXd slip = P * (xc - xp);
    const double e = std::exp(-w.gamma * fq.dist);
    const double s2 = slip.squaredNorm();
    out.value += w.c_shuffle * s2 * e;

    Eigen::MatrixXd Jp = prev.J.middleRows(v * dim, dim);
    Eigen::MatrixXd Jc = cur.J.middleRows(v * dim, dim);
    out.grad.head(nq) -= 2.0 * w.c_shuffle * e * Jp.transpose() * (P * slip);
    out.grad.tail(nq) += w.c_shuffle * e *
                         Jc.transpose() * (2.0 * (P * slip) - w.gamma * s2 * fq.grad);

    // First-order expansion of the slip and attenuation around the current
    // point, in the local (prev vertex, cur vertex) coordinates; clamped to
    // PSD before chaining through the Jacobians.
    Eigen::MatrixXd L0(dim, 2 * dim), m0 = Eigen::MatrixXd::Zero(1, 2 * dim);
    L0.leftCols(dim) = -P;
    L0.rightCols(dim) = P;
    m0.rightCols(dim) = fq.grad.transpose();
    Eigen::MatrixXd hloc =
        w.c_shuffle * e *
        (2.0 * L0.transpose() * L0 -
         2.0 * w.gamma *
             (L0.transpose() * slip * m0 + m0.transpose() * slip.transpose() * L0) +
         w.gamma * w.gamma * s2 * m0.transpose() * m0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
        0.5 * (hloc + hloc.transpose()));
    Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0);
    hloc = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();

    Eigen::MatrixXd Jz = Eigen::MatrixXd::Zero(2 * dim, 2 * nq);
    Jz.topLeftCorner(dim, nq) = Jp;
    Jz.bottomRightCorner(dim, nq) = Jc;
    out.hess += Jz.transpose() * hloc * Jz;
  }
  return out;
}

DmpEnergy eDmp(const Eigen::MatrixXd& targets, const Eigen::VectorXd& times,
               const DmpWeights& dmp, double c_dmp) {
  const int T = static_cast<int>(targets.rows());
  const int C = dmp.channels(), N = dmp.neurons;
  if (targets.cols() != C) throw EnergyError("dmp energy channel mismatch");
  if (times.size() != T) throw EnergyError("dmp energy time count mismatch");
  DmpEnergy out;
  out.d_targets = Eigen::MatrixXd::Zero(T, C);
  out.d_alpha = Eigen::MatrixXd::Zero(C, N);
  out.d_beta = Eigen::MatrixXd::Zero(C, N);
  out.d_mu = Eigen::MatrixXd::Zero(C, N);
  for (int k = 0; k < T; ++k)
    for (int j = 0; j < C; ++j) {
      DmpChannelGrad g = dmpEvalGrad(dmp, j, times[k]);
      const double r = targets(k, j) - g.value;
      out.value += 0.5 * c_dmp * r * r;
      out.d_targets(k, j) = c_dmp * r;
      out.d_alpha.row(j) -= c_dmp * r * g.d_alpha.transpose();
      out.d_beta.row(j) -= c_dmp * r * g.d_beta.transpose();
      out.d_mu.row(j) -= c_dmp * r * g.d_mu.transpose();
      out.d_tau -= c_dmp * r * g.d_tau;
    }
  return out;
}

namespace {

double taskWeight(const TaskObjective& task, const WeightSet& w) {
  if (task.weight >= 0) return task.weight;
  if (task.kind == "move") return w.c_move;
  if (task.kind == "turn") return w.c_turn;
  if (task.kind == "balance") return w.c_bal;
  if (task.kind == "jump") return w.c_jump;
  if (task.kind == "track") return w.c_track;
  if (task.kind == "keyframe") return w.c_key;
  throw EnergyError("unknown task kind: " + task.kind);
}

/// Gauss-Newton accumulation of C/2 |e|^2 with Jacobian Je over a window.
void addResidual(double C, const Eigen::VectorXd& e, const Eigen::MatrixXd& Je,
                 double& value, Eigen::VectorXd& g, Eigen::MatrixXd& h) {
  value += 0.5 * C * e.squaredNorm();
  g += C * Je.transpose() * e;
  h += C * Je.transpose() * Je;
}

}  // namespace

void addTaskEnergy(EnergyAccum& acc, const TaskObjective& task, const RsModel& model,
                   const std::vector<FrameCache>& frames, double dt,
                   const WeightSet& w) {
  const int nq = model.numQ(), r = model.r, dim = model.dim;
  const int rot = model.rotDimLocal();
  const int K = static_cast<int>(frames.size());
  const double C = taskWeight(task, w);
  const int cofs = r, wofs = r + dim;

  if (task.kind == "move" || task.kind == "turn") {
    for (int k = 1; k + 1 < K; ++k) {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(2 * nq);
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2 * nq, 2 * nq);
      double val = 0;
      if (task.kind == "move") {
        RotationExp re = expRot(dim, frames[k + 1].q.w, 1);
        Eigen::VectorXd e =
            frames[k + 1].q.c - frames[k].q.c - re.R * task.v_c * dt;
        Eigen::MatrixXd Je = Eigen::MatrixXd::Zero(dim, 2 * nq);
        Je.block(0, cofs, dim, dim) = -Eigen::MatrixXd::Identity(dim, dim);
        Je.block(0, nq + cofs, dim, dim) = Eigen::MatrixXd::Identity(dim, dim);
        for (int a = 0; a < rot; ++a)
          Je.col(nq + wofs + a) = -dt * (re.dR[a] * task.v_c);
        addResidual(C, e, Je, val, g, h);
      } else {
        RotationExp ra = expRot(dim, frames[k].q.w, 1);
        RotationExp rb = expRot(dim, frames[k + 1].q.w, 1);
        Eigen::VectorXd wt = dim == 2 ? Eigen::VectorXd::Constant(1, task.theta * dt)
                                      : Eigen::VectorXd(task.theta * dt * task.d);
        Eigen::MatrixXd Rt = expRot(dim, wt, 0).R;
        Eigen::MatrixXd E = rb.R - Rt * ra.R;
        Eigen::VectorXd e = Eigen::Map<Eigen::VectorXd>(E.data(), dim * dim);
        Eigen::MatrixXd Je = Eigen::MatrixXd::Zero(dim * dim, 2 * nq);
        for (int a = 0; a < rot; ++a) {
          Eigen::MatrixXd Da = -Rt * ra.dR[a];
          Eigen::MatrixXd Db = rb.dR[a];
          Je.col(wofs + a) = Eigen::Map<Eigen::VectorXd>(Da.data(), dim * dim);
          Je.col(nq + wofs + a) = Eigen::Map<Eigen::VectorXd>(Db.data(), dim * dim);
        }
        addResidual(C, e, Je, val, g, h);
      }
      acc.value += val;
      acc.add2(k, g, h);
    }
    return;
  }

  if (task.kind == "balance") {
    for (int k = 1; k < K; ++k) {
      RotationExp re = expRot(dim, frames[k].q.w, 1);
      Eigen::VectorXd e = re.R * task.d - task.d;
      Eigen::MatrixXd Je = Eigen::MatrixXd::Zero(dim, nq);
      for (int a = 0; a < rot; ++a) Je.col(wofs + a) = re.dR[a] * task.d;
      Eigen::VectorXd g = Eigen::VectorXd::Zero(nq);
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nq, nq);
      double val = 0;
      addResidual(C, e, Je, val, g, h);
      acc.value += val;
      acc.add1(k, g, h);
    }
    return;
  }

  if (task.kind == "jump") {
    const int mid = K / 2 - 1;  // paper indexes 1-based K/2
    if (mid < 1) throw EnergyError("jump task needs K >= 4");
    Eigen::VectorXd g = Eigen::VectorXd::Zero(2 * nq);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2 * nq, 2 * nq);
    double val = 0;

    Eigen::VectorXd e1(1);
    e1[0] = task.up.dot(frames[mid].q.c) - task.h;
    Eigen::MatrixXd J1 = Eigen::MatrixXd::Zero(1, 2 * nq);
    J1.block(0, nq + cofs, 1, dim) = task.up.transpose();
    addResidual(C, e1, J1, val, g, h);

    Eigen::MatrixXd Pp =
        Eigen::MatrixXd::Identity(dim, dim) - task.up * task.up.transpose();
    RotationExp re = expRot(dim, frames[mid].q.w, 1);
    Eigen::VectorXd e2 =
        Pp * (frames[mid].q.c - frames[mid - 1].q.c - re.R * task.v_c * dt);
    Eigen::MatrixXd J2 = Eigen::MatrixXd::Zero(dim, 2 * nq);
    J2.block(0, cofs, dim, dim) = -Pp;
    J2.block(0, nq + cofs, dim, dim) = Pp;
    for (int a = 0; a < rot; ++a)
      J2.col(nq + wofs + a) = -dt * (Pp * (re.dR[a] * task.v_c));
    addResidual(C, e2, J2, val, g, h);

    acc.value += val;
    acc.add2(mid - 1, g, h);
    return;
  }

  if (task.kind == "track") {
    const Eigen::VectorXd mass = expandedMass(model);
    for (int k = 0; k < K; ++k) {
      if (k >= static_cast<int>(task.reference.size()) ||
          task.reference[k].u.size() == 0)
        continue;
      Eigen::VectorXd e = frames[k].x - reconstruct(model, task.reference[k]);
      Eigen::MatrixXd MJ = mass.asDiagonal() * frames[k].J;
      acc.value += 0.5 * C * e.dot(mass.cwiseProduct(e));
      acc.grad[k] += C * frames[k].J.transpose() * mass.cwiseProduct(e);
      acc.diag[k] += C * frames[k].J.transpose() * MJ;
    }
    return;
  }

  if (task.kind == "keyframe") {
    Eigen::VectorXd imp = task.key_importance.size() == r
                              ? task.key_importance
                              : Eigen::VectorXd::Ones(r);
    for (size_t i = 0; i < task.key_t.size(); ++i) {
      const int k = task.key_t[i];
      if (k < 0 || k >= K) throw EnergyError("keyframe timestep out of range");
      Eigen::VectorXd e = imp.cwiseProduct(task.key_u[i] - frames[k].q.u);
      acc.value += 0.5 * C * e.squaredNorm();
      Eigen::VectorXd g = Eigen::VectorXd::Zero(nq);
      g.head(r) = -C * imp.cwiseProduct(e);
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nq, nq);
      h.topLeftCorner(r, r) = C * imp.cwiseAbs2().asDiagonal();
      acc.add1(k, g, h);
    }
    return;
  }

  throw EnergyError("unknown task kind: " + task.kind);
}

}  // namespace rdl

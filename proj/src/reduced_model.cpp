#include "rdl/reduced_model.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <random>

#include "rdl/nnls.hpp"

namespace rdl {

namespace {

int symCount(int d) { return d * (d + 1) / 2; }

// symmetric-coefficient ordering: 2D (s00, s01, s11); 3D (s00, s01, s02,
// s11, s12, s22)
Eigen::MatrixXd symMat(int d, const Eigen::VectorXd& s) {
  Eigen::MatrixXd m(d, d);
  int k = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      m(i, j) = s[k];
      m(j, i) = s[k];
      ++k;
    }
  return m;
}

Eigen::VectorXd symCoeffs(int d, const Eigen::MatrixXd& m) {
  Eigen::VectorXd s(symCount(d));
  int k = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) s[k++] = 0.5 * (m(i, j) + m(j, i));
  return s;
}

// coefficients g so that <T, symMat(s)> = g . s
Eigen::VectorXd symContract(int d, const Eigen::MatrixXd& t) {
  Eigen::VectorXd g(symCount(d));
  int k = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) g[k++] = (i == j) ? t(i, i) : t(i, j) + t(j, i);
  return g;
}

Eigen::VectorXd skewCoeffs(int d, const Eigen::MatrixXd& m) {
  if (d == 2) {
    Eigen::VectorXd t(1);
    t[0] = 0.5 * (m(1, 0) - m(0, 1));
    return t;
  }
  Eigen::VectorXd t(3);
  t[0] = 0.5 * (m(2, 1) - m(1, 2));
  t[1] = 0.5 * (m(0, 2) - m(2, 0));
  t[2] = 0.5 * (m(1, 0) - m(0, 1));
  return t;
}

Eigen::VectorXd vecOf(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

Eigen::MatrixXd unvec(int d, const Eigen::VectorXd& v) {
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), d, d);
}

// apply a d x d matrix to every vertex block of a V*d vector
Eigen::VectorXd blockApply(const Eigen::MatrixXd& R, const Eigen::VectorXd& x) {
  const int d = static_cast<int>(R.rows());
  Eigen::VectorXd out(x.size());
  for (int v = 0; v * d < x.size(); ++v)
    out.segment(v * d, d) = R * x.segment(v * d, d);
  return out;
}

struct Eigensolve {
  Eigen::VectorXd values;   // r retained, ascending, rigid modes skipped
  Eigen::MatrixXd vectors;  // (V*d) x r, mass-orthonormal
};

Eigensolve modalAnalysis(const FemOperators& fem, int r) {
  const int d = fem.dim, n = fem.numVertices() * d;
  const int skip = d + rotDim(d);
  if (r < 1) throw PrecomputeError("subspace size must be at least 1");
  if (r > n - skip)
    throw PrecomputeError("subspace size " + std::to_string(r) +
                          " exceeds available non-rigid modes " + std::to_string(n - skip));

  Eigen::MatrixXd K = Eigen::MatrixXd(fem.stiffness_full);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  for (int v = 0; v < fem.numVertices(); ++v)
    for (int a = 0; a < d; ++a) M(v * d + a, v * d + a) = fem.vertex_mass[v];

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(K, M);
  if (es.info() != Eigen::Success) throw PrecomputeError("modal eigensolve failed");

  Eigensolve out;
  out.values = es.eigenvalues().segment(skip, r);
  out.vectors = es.eigenvectors().middleCols(skip, r);
  // deterministic sign: largest-magnitude component positive
  for (int k = 0; k < r; ++k) {
    int idx;
    out.vectors.col(k).cwiseAbs().maxCoeff(&idx);
    if (out.vectors(idx, k) < 0) out.vectors.col(k) = -out.vectors.col(k);
  }
  return out;
}

void checkConfig(const RsModel& m, const ReducedConfig& q) {
  if (q.u.size() != m.r || q.c.size() != m.dim || q.w.size() != m.rotDimLocal())
    throw std::invalid_argument("reduced config dimensions do not match model");
  if (!q.finite()) throw std::invalid_argument("reduced config has non-finite entries");
}

// Per-element evaluation pieces for the RS transform at local coords u.
struct RsElemEval {
  RotationExp rot;          // exp(tau)
  Eigen::MatrixXd S;        // d x d
  Eigen::MatrixXd btau;     // rot_dim x r rows of B
  Eigen::MatrixXd bsym;     // symCount x r rows of B
  Eigen::VectorXd vecF;     // d*d

  Eigen::MatrixXd dvecF(int d, int r) const {
    Eigen::MatrixXd out(d * d, r);
    const int rd = static_cast<int>(btau.rows());
    for (int k = 0; k < r; ++k) {
      Eigen::MatrixXd dF = rot.R * symMat(d, bsym.col(k));
      for (int m = 0; m < rd; ++m) dF += btau(m, k) * rot.dR[m] * S;
      out.col(k) = vecOf(dF);
    }
    return out;
  }
};

// linearized RS map of element j: d vec(exp(tau) S)/du at u = 0, (d*d) x r
Eigen::MatrixXd elemLinMap(const RsModel& m, int j) {
  const int d = m.dim, rd = m.rotDimLocal();
  Eigen::MatrixXd btau = m.bases.middleRows(j * m.rsPerElement(), rd);
  Eigen::MatrixXd bsym = m.bases.middleRows(j * m.rsPerElement() + rd, symCount(d));
  Eigen::MatrixXd L(d * d, m.r);
  for (int k = 0; k < m.r; ++k) {
    Eigen::MatrixXd D = symMat(d, bsym.col(k));
    if (d == 2) {
      D(0, 1) -= btau(0, k);
      D(1, 0) += btau(0, k);
    } else {
      D += crossMatrix(Eigen::Vector3d(btau.col(k)));
    }
    L.col(k) = vecOf(D);
  }
  return L;
}

RsElemEval rsElemEval(const RsModel& m, const Eigen::VectorXd& u, int j, int order) {
  const int d = m.dim, rd = m.rotDimLocal(), sc = symCount(d);
  RsElemEval e;
  e.btau = m.bases.middleRows(j * m.rsPerElement(), rd);
  e.bsym = m.bases.middleRows(j * m.rsPerElement() + rd, sc);
  Eigen::VectorXd tau = e.btau * u;
  e.rot = expRot(d, tau, order);
  e.S = Eigen::MatrixXd::Identity(d, d) + symMat(d, e.bsym * u);
  e.vecF = vecOf(Eigen::MatrixXd(e.rot.R * e.S));
  return e;
}

// pinned local positions (before the global rigid transform)
Eigen::VectorXd localPositions(const RsModel& m, const Eigen::VectorXd& u, EvalMode mode) {
  const int d = m.dim;
  if (m.variant != ModelVariant::RS) return m.fem->rest_pinned + m.bases * u;
  if (mode == EvalMode::Cubature && !m.kinetic_cubature.empty()) {
    Eigen::VectorXd vecI = vecOf(Eigen::MatrixXd::Identity(d, d));
    Eigen::VectorXd x = m.fem->rest_pinned + m.linear_recon * u;
    for (size_t k = 0; k < m.kinetic_cubature.items.size(); ++k) {
      int j = m.kinetic_cubature.items[k];
      RsElemEval e = rsElemEval(m, u, j, 0);
      Eigen::VectorXd nl = e.vecF - vecI - elemLinMap(m, j) * u;
      x += m.kinetic_cubature.weights[k] * (m.fem->poisson_cols[j] * nl);
    }
    return x;
  }
  Eigen::VectorXd vecF(m.fem->numElements() * d * d);
  for (int j = 0; j < m.fem->numElements(); ++j)
    vecF.segment(j * d * d, d * d) = rsElemEval(m, u, j, 0).vecF;
  return m.fem->poissonReconstructPinned(vecF);
}

// d(local positions)/du, (V*d) x r
Eigen::MatrixXd localJacobian(const RsModel& m, const Eigen::VectorXd& u, EvalMode mode) {
  if (m.variant != ModelVariant::RS) return m.bases;
  const int d = m.dim, r = m.r;
  Eigen::MatrixXd ju = Eigen::MatrixXd::Zero(m.fem->numVertices() * d, r);
  if (mode == EvalMode::Cubature && !m.kinetic_cubature.empty()) {
    ju = m.linear_recon;
    for (size_t k = 0; k < m.kinetic_cubature.items.size(); ++k) {
      int j = m.kinetic_cubature.items[k];
      RsElemEval e = rsElemEval(m, u, j, 1);
      Eigen::MatrixXd dnl = e.dvecF(d, r) - elemLinMap(m, j);
      ju += m.kinetic_cubature.weights[k] * (m.fem->poisson_cols[j] * dnl);
    }
  } else {
    for (int j = 0; j < m.fem->numElements(); ++j) {
      RsElemEval e = rsElemEval(m, u, j, 1);
      ju += m.fem->poisson_cols[j] * e.dvecF(d, r);
    }
  }
  return ju;
}

void forEachCubElem(const RsModel& m, EvalMode mode,
                    const std::function<void(int, double)>& fn) {
  if (m.variant != ModelVariant::RS) return;
  if (mode == EvalMode::Cubature && !m.kinetic_cubature.empty()) {
    for (size_t k = 0; k < m.kinetic_cubature.items.size(); ++k)
      fn(m.kinetic_cubature.items[k], m.kinetic_cubature.weights[k]);
  } else {
    for (int j = 0; j < m.fem->numElements(); ++j) fn(j, 1.0);
  }
}

void buildLinearRecon(RsModel& m) {
  if (m.variant != ModelVariant::RS) return;
  m.linear_recon = Eigen::MatrixXd::Zero(m.fem->rest_pinned.size(), m.r);
  for (int j = 0; j < m.fem->numElements(); ++j)
    m.linear_recon += m.fem->poisson_cols[j] * elemLinMap(m, j);
}

void buildStvkGrad(RsModel& m) {
  const int d = m.dim;
  Eigen::MatrixXd gu = m.fem->grad_op * m.bases;
  m.stvk_grad.resize(m.fem->numElements());
  for (int j = 0; j < m.fem->numElements(); ++j)
    m.stvk_grad[j] = gu.middleRows(j * d * d, d * d);
}

nlohmann::json matToJson(const Eigen::MatrixXd& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(m.size());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  j["data"] = data;
  return j;
}

Eigen::MatrixXd matFromJson(const nlohmann::json& j) {
  int rows = j.at("rows"), cols = j.at("cols");
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  if (static_cast<int>(data.size()) != rows * cols)
    throw PrecomputeError("matrix payload size mismatch in model cache");
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = data[r * cols + c];
  return m;
}

}  // namespace

Eigen::VectorXd ReducedConfig::stacked() const {
  Eigen::VectorXd q(size());
  q << u, c, w;
  return q;
}

ReducedConfig ReducedConfig::zero(int r, int dim) {
  ReducedConfig q;
  q.u = Eigen::VectorXd::Zero(r);
  q.c = Eigen::VectorXd::Zero(dim);
  q.w = Eigen::VectorXd::Zero(rotDim(dim));
  return q;
}

ReducedConfig ReducedConfig::fromStacked(const Eigen::VectorXd& q, int r, int dim) {
  ReducedConfig out;
  out.u = q.head(r);
  out.c = q.segment(r, dim);
  out.w = q.tail(rotDim(dim));
  return out;
}

bool ReducedConfig::finite() const {
  return u.allFinite() && c.allFinite() && w.allFinite();
}

std::shared_ptr<RsModel> buildRsBases(const VolumetricMesh& mesh,
                                      std::shared_ptr<const FemOperators> fem, int r) {
  (void)mesh;
  auto model = std::make_shared<RsModel>();
  model->variant = ModelVariant::RS;
  model->dim = fem->dim;
  model->r = r;
  model->fem = fem;

  Eigensolve es = modalAnalysis(*fem, r);
  model->stiffness_eigs = es.values;

  const int d = fem->dim, P = fem->numElements();
  const int rs_pe = model->rsPerElement(), rd = model->rotDimLocal();
  model->bases.resize(P * rs_pe, r);
  for (int k = 0; k < r; ++k) {
    Eigen::VectorXd vecD = fem->grad_op * es.vectors.col(k);  // displacement gradients
    for (int j = 0; j < P; ++j) {
      Eigen::MatrixXd D = unvec(d, vecD.segment(j * d * d, d * d));
      model->bases.block(j * rs_pe, k, rd, 1) = skewCoeffs(d, D);
      model->bases.block(j * rs_pe + rd, k, symCount(d), 1) = symCoeffs(d, D);
    }
  }
  buildLinearRecon(*model);
  return model;
}

std::shared_ptr<RsModel> buildLinearModel(const VolumetricMesh& mesh,
                                          std::shared_ptr<const FemOperators> fem, int r,
                                          ModelVariant variant) {
  (void)mesh;
  if (variant == ModelVariant::RS)
    throw PrecomputeError("buildLinearModel expects LMA or StVK");
  auto model = std::make_shared<RsModel>();
  model->variant = variant;
  model->dim = fem->dim;
  model->r = r;
  model->fem = fem;

  Eigensolve es = modalAnalysis(*fem, r);
  model->stiffness_eigs = es.values;
  model->bases = es.vectors;
  if (variant == ModelVariant::StVK) buildStvkGrad(*model);
  return model;
}

Eigen::VectorXd reconstruct(const RsModel& model, const ReducedConfig& q, EvalMode mode) {
  checkConfig(model, q);
  const int d = model.dim;
  Eigen::VectorXd x = localPositions(model, q.u, mode);
  RotationExp rot = expRot(d, q.w, 0);
  x = blockApply(rot.R, x);
  for (int v = 0; v < model.fem->numVertices(); ++v)
    x.segment(v * d, d) += model.fem->rest_centroid + q.c;
  return x;
}

Eigen::MatrixXd jacobian(const RsModel& model, const ReducedConfig& q, EvalMode mode) {
  checkConfig(model, q);
  const int d = model.dim, r = model.r, rd = model.rotDimLocal();
  const int n = model.fem->numVertices() * d;
  RotationExp rot = expRot(d, q.w, 1);
  Eigen::VectorXd x_local = localPositions(model, q.u, mode);
  Eigen::MatrixXd ju = localJacobian(model, q.u, mode);

  Eigen::MatrixXd jac(n, model.numQ());
  for (int k = 0; k < r; ++k) jac.col(k) = blockApply(rot.R, ju.col(k));
  jac.middleCols(r, d).setZero();
  for (int v = 0; v < model.fem->numVertices(); ++v)
    jac.block(v * d, r, d, d).setIdentity();
  for (int m = 0; m < rd; ++m)
    jac.col(r + d + m) = blockApply(rot.dR[m], x_local);
  return jac;
}

Eigen::MatrixXd hessContractLeft(const RsModel& model, const ReducedConfig& q,
                                 const Eigen::VectorXd& z, EvalMode mode) {
  checkConfig(model, q);
  const int d = model.dim, r = model.r, rd = model.rotDimLocal();
  const int nq = model.numQ();
  RotationExp rot = expRot(d, q.w, 2);

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nq, nq);
  Eigen::VectorXd x_local = localPositions(model, q.u, mode);
  Eigen::MatrixXd ju = localJacobian(model, q.u, mode);

  // u-u block: z pulled back through the global rotation, contracted with
  // the per-element second derivative of vec(exp(tau) S)
  if (model.variant == ModelVariant::RS) {
    Eigen::VectorXd zl = blockApply(Eigen::MatrixXd(rot.R.transpose()), z);
    forEachCubElem(model, mode, [&](int j, double wgt) {
      RsElemEval e = rsElemEval(model, q.u, j, 2);
      Eigen::MatrixXd Y = unvec(d, Eigen::VectorXd(model.fem->poisson_cols[j].transpose() * zl));
      const int erd = rotDim(d);
      Eigen::MatrixXd a(erd, erd);
      Eigen::MatrixXd YS = Y * e.S.transpose();
      for (int m = 0; m < erd; ++m)
        for (int nn = 0; nn < erd; ++nn)
          a(m, nn) = (e.rot.ddR[m][nn].array() * YS.array()).sum();
      Eigen::MatrixXd g(erd, r);
      for (int m = 0; m < erd; ++m)
        g.row(m) = symContract(d, Eigen::MatrixXd(e.rot.dR[m].transpose() * Y)).transpose() * e.bsym;
      H.topLeftCorner(r, r) +=
          wgt * (e.btau.transpose() * a * e.btau + e.btau.transpose() * g +
                 g.transpose() * e.btau);
    });
  }

  // u-w cross terms
  for (int m = 0; m < rd; ++m) {
    Eigen::VectorXd zdm = blockApply(Eigen::MatrixXd(rot.dR[m].transpose()), z);
    Eigen::VectorXd row = ju.transpose() * zdm;
    H.block(0, r + d + m, r, 1) += row;
    H.block(r + d + m, 0, 1, r) += row.transpose();
  }

  // w-w block
  for (int m = 0; m < rd; ++m)
    for (int nn = 0; nn < rd; ++nn)
      H(r + d + m, r + d + nn) += z.dot(blockApply(rot.ddR[m][nn], x_local));

  return H;
}

Eigen::VectorXd hessianQuadVec(const RsModel& model, const ReducedConfig& q,
                               const Eigen::VectorXd& d1, const Eigen::VectorXd& d2,
                               EvalMode mode) {
  checkConfig(model, q);
  const int d = model.dim, r = model.r, rd = model.rotDimLocal();
  const int n = model.fem->numVertices() * d;
  if (d1.size() != model.numQ() || d2.size() != model.numQ())
    throw std::invalid_argument("direction size does not match model");
  RotationExp rot = expRot(d, q.w, 2);

  Eigen::VectorXd x_local = localPositions(model, q.u, mode);
  Eigen::MatrixXd ju = localJacobian(model, q.u, mode);
  Eigen::VectorXd u1 = d1.head(r), u2 = d2.head(r);
  Eigen::VectorXd w1 = d1.tail(rd), w2 = d2.tail(rd);

  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);

  // local u-u curvature, rotated to world
  if (model.variant == ModelVariant::RS) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
    forEachCubElem(model, mode, [&](int j, double wgt) {
      RsElemEval e = rsElemEval(model, q.u, j, 2);
      const int erd = rotDim(d);
      Eigen::VectorXd t1 = e.btau * u1, t2 = e.btau * u2;
      Eigen::VectorXd s1 = e.bsym * u1, s2 = e.bsym * u2;
      Eigen::MatrixXd ddF = Eigen::MatrixXd::Zero(d, d);
      for (int m = 0; m < erd; ++m) {
        for (int nn = 0; nn < erd; ++nn) ddF += t1[m] * t2[nn] * e.rot.ddR[m][nn] * e.S;
        ddF += e.rot.dR[m] * (t1[m] * symMat(d, s2) + t2[m] * symMat(d, s1));
      }
      acc += wgt * (model.fem->poisson_cols[j] * vecOf(ddF));
    });
    out += blockApply(rot.R, acc);
  }

  // rotation-deformation cross terms
  Eigen::VectorXd jxu1 = ju * u1, jxu2 = ju * u2;
  for (int m = 0; m < rd; ++m)
    out += blockApply(rot.dR[m], Eigen::VectorXd(w1[m] * jxu2 + w2[m] * jxu1));

  // rotation-rotation
  for (int m = 0; m < rd; ++m)
    for (int nn = 0; nn < rd; ++nn)
      out += w1[m] * w2[nn] * blockApply(rot.ddR[m][nn], x_local);

  return out;
}

PotentialEval potential(const RsModel& model, const Eigen::VectorXd& u, int order) {
  if (u.size() != model.r) throw std::invalid_argument("potential: wrong u size");
  PotentialEval out;
  const int r = model.r;
  if (model.variant != ModelVariant::StVK) {
    out.value = 0.5 * u.dot(model.stiffness_eigs.cwiseProduct(u));
    if (order >= 1) out.grad = model.stiffness_eigs.cwiseProduct(u);
    if (order >= 2) out.hess = model.stiffness_eigs.asDiagonal();
    return out;
  }

  const int d = model.dim;
  const double mu = model.fem->lame_mu, lam = model.fem->lame_lambda;
  out.grad = Eigen::VectorXd::Zero(r);
  out.hess = Eigen::MatrixXd::Zero(r, r);
  for (int j = 0; j < model.fem->numElements(); ++j) {
    const double vol = model.fem->element_volume[j];
    const Eigen::MatrixXd& G = model.stvk_grad[j];
    Eigen::MatrixXd F = Eigen::MatrixXd::Identity(d, d) + unvec(d, Eigen::VectorXd(G * u));
    Eigen::MatrixXd E = 0.5 * (F.transpose() * F - Eigen::MatrixXd::Identity(d, d));
    double trE = E.trace();
    out.value += vol * (mu * (E.array() * E.array()).sum() + 0.5 * lam * trE * trE);
    if (order < 1) continue;
    Eigen::MatrixXd S2 = 2.0 * mu * E + lam * trE * Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd P1 = F * S2;  // first Piola-Kirchhoff stress
    out.grad += vol * (G.transpose() * vecOf(P1));
    if (order < 2) continue;
    std::vector<Eigen::MatrixXd> dF(r), dS2(r);
    for (int k = 0; k < r; ++k) {
      dF[k] = unvec(d, Eigen::VectorXd(G.col(k)));
      Eigen::MatrixXd dE = 0.5 * (dF[k].transpose() * F + F.transpose() * dF[k]);
      dS2[k] = 2.0 * mu * dE + lam * dE.trace() * Eigen::MatrixXd::Identity(d, d);
    }
    for (int k = 0; k < r; ++k) {
      Eigen::MatrixXd dPk = dF[k] * S2 + F * dS2[k];
      for (int l = k; l < r; ++l) {
        double h = vol * (dPk.array() * dF[l].array()).sum();
        out.hess(k, l) += h;
        if (l != k) out.hess(l, k) += h;
      }
    }
  }
  return out;
}

std::vector<Eigen::VectorXd> samplePoses(const RsModel& model, int count,
                                         double amplitude, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double l = model.fem->avg_element_size;
  const double lam0 = std::max(model.stiffness_eigs[0], 1e-30);
  Eigen::VectorXd stddev(model.r);
  for (int k = 0; k < model.r; ++k) {
    double lam = std::max(model.stiffness_eigs[k], lam0);
    stddev[k] = amplitude * l * std::sqrt(model.fem->total_mass) * std::sqrt(lam0 / lam);
  }
  std::vector<Eigen::VectorXd> out;
  out.reserve(count);
  for (int s = 0; s < count; ++s) {
    Eigen::VectorXd u(model.r);
    for (int k = 0; k < model.r; ++k) u[k] = stddev[k] * gauss(rng);
    out.push_back(u);
  }
  return out;
}

Cubature trainCubatureGreedy(int n_items, const Eigen::VectorXd& target,
                             const std::function<Eigen::VectorXd(int)>& column,
                             double target_rel_err, int max_items,
                             double norm_scale) {
  Cubature cub;
  const double tnorm = norm_scale > 0 ? norm_scale : target.norm();
  if (tnorm == 0 || n_items == 0) return cub;
  if (max_items <= 0 || max_items > n_items) max_items = n_items;

  const Eigen::Index rows = target.size();
  const bool cache = rows * static_cast<long long>(n_items) <= 25'000'000;
  Eigen::MatrixXd cols;
  if (cache) {
    cols.resize(rows, n_items);
    for (int i = 0; i < n_items; ++i) cols.col(i) = column(i);
  }
  auto getCol = [&](int i) -> Eigen::VectorXd { return cache ? cols.col(i) : column(i); };

  std::vector<bool> used(n_items, false);
  Eigen::VectorXd residual = target;
  Eigen::MatrixXd A(rows, 0);           // selected columns
  Eigen::MatrixXd G(0, 0);              // Gram of selected columns
  Eigen::VectorXd ct(0);                // selected^T target
  double rel = 1.0;
  while (static_cast<int>(cub.items.size()) < max_items) {
    int best = -1;
    double best_score = 0;
    if (cache) {
      Eigen::VectorXd scores = cols.transpose() * residual;
      for (int i = 0; i < n_items; ++i) {
        if (used[i]) continue;
        double nrm = cols.col(i).norm();
        if (nrm <= 0) continue;
        double score = scores[i] / nrm;
        if (score > best_score) {
          best_score = score;
          best = i;
        }
      }
    } else {
      for (int i = 0; i < n_items; ++i) {
        if (used[i]) continue;
        Eigen::VectorXd ci = column(i);
        double nrm = ci.norm();
        if (nrm <= 0) continue;
        double score = ci.dot(residual) / nrm;
        if (score > best_score) {
          best_score = score;
          best = i;
        }
      }
    }
    if (best < 0) break;
    used[best] = true;
    cub.items.push_back(best);
    const int k = static_cast<int>(cub.items.size());
    A.conservativeResize(rows, k);
    A.col(k - 1) = getCol(best);
    G.conservativeResize(k, k);
    G.block(0, k - 1, k, 1) = A.transpose() * A.col(k - 1);
    G.block(k - 1, 0, 1, k - 1) = G.block(0, k - 1, k - 1, 1).transpose();
    ct.conservativeResize(k);
    ct[k - 1] = A.col(k - 1).dot(target);

    cub.weights = solveNnlsGram(G, ct);
    residual = target - A * cub.weights;
    rel = residual.norm() / tnorm;
    if (std::getenv("RDL_CUB_TRACE"))
      std::fprintf(stderr, "cubature k=%d rel=%.4g\n", k, rel);
    if (rel <= target_rel_err || rel < 1e-10) break;
  }
  cub.training_error = rel;
  cub.saturated = rel > target_rel_err && rel >= 1e-10;
  return cub;
}

Cubature trainKineticCubature(RsModel& model, const std::vector<Eigen::VectorXd>& samples,
                              double target_rel_err) {
  if (samples.size() < 100)
    throw PrecomputeError("cubature training needs at least 100 poses");
  if (model.variant != ModelVariant::RS) {
    // linear variants are element-sum free; nothing to approximate
    model.kinetic_cubature = Cubature{};
    return model.kinetic_cubature;
  }
  const int d = model.dim, P = model.fem->numElements();
  const int S = static_cast<int>(samples.size());
  const Eigen::Index n = model.fem->rest_pinned.size();
  Eigen::VectorXd vecI = vecOf(Eigen::MatrixXd::Identity(d, d));

  // per-sample, per-element nonlinear remainders vec(F) - vec(I) - L u; the
  // linear part is reproduced exactly by linear_recon and excluded from the
  // fit. Errors are measured against the full deformation delta.
  Eigen::MatrixXd remainders(P * d * d, S);
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < P; ++j)
      remainders.block(j * d * d, s, d * d, 1) =
          rsElemEval(model, samples[s], j, 0).vecF - vecI -
          elemLinMap(model, j) * samples[s];

  Eigen::VectorXd target(n * S);
  double delta_sq = 0;
  for (int s = 0; s < S; ++s) {
    Eigen::VectorXd lin = model.linear_recon * samples[s];
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < P; ++j)
      x += model.fem->poisson_cols[j] * remainders.block(j * d * d, s, d * d, 1);
    target.segment(n * s, n) = x;
    delta_sq += (lin + x).squaredNorm();
  }
  auto column = [&](int j) {
    Eigen::VectorXd col(n * S);
    for (int s = 0; s < S; ++s)
      col.segment(n * s, n) =
          model.fem->poisson_cols[j] * remainders.block(j * d * d, s, d * d, 1);
    return col;
  };

  model.kinetic_cubature =
      trainCubatureGreedy(P, target, column, target_rel_err, 0, std::sqrt(delta_sq));
  return model.kinetic_cubature;
}

nlohmann::json modelToJson(const RsModel& model) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["variant"] = model.variant == ModelVariant::RS    ? "rs"
                 : model.variant == ModelVariant::LMA ? "lma"
                                                      : "stvk";
  j["dim"] = model.dim;
  j["r"] = model.r;
  j["bases"] = matToJson(model.bases);
  j["stiffness_eigs"] = std::vector<double>(model.stiffness_eigs.data(),
                                            model.stiffness_eigs.data() + model.r);
  nlohmann::json cub;
  cub["items"] = model.kinetic_cubature.items;
  cub["weights"] = std::vector<double>(
      model.kinetic_cubature.weights.data(),
      model.kinetic_cubature.weights.data() + model.kinetic_cubature.weights.size());
  cub["training_error"] = model.kinetic_cubature.training_error;
  cub["saturated"] = model.kinetic_cubature.saturated;
  j["kinetic_cubature"] = cub;
  return j;
}

std::shared_ptr<RsModel> modelFromJson(const nlohmann::json& j,
                                       std::shared_ptr<const FemOperators> fem) {
  auto model = std::make_shared<RsModel>();
  std::string var = j.at("variant");
  model->variant = var == "rs"    ? ModelVariant::RS
                   : var == "lma" ? ModelVariant::LMA
                                  : ModelVariant::StVK;
  model->dim = j.at("dim");
  model->r = j.at("r");
  model->fem = fem;
  if (model->dim != fem->dim) throw PrecomputeError("model cache dimension mismatch");
  model->bases = matFromJson(j.at("bases"));
  std::vector<double> eigs = j.at("stiffness_eigs").get<std::vector<double>>();
  model->stiffness_eigs = Eigen::Map<Eigen::VectorXd>(eigs.data(), eigs.size());

  const nlohmann::json& cub = j.at("kinetic_cubature");
  model->kinetic_cubature.items = cub.at("items").get<std::vector<int>>();
  std::vector<double> w = cub.at("weights").get<std::vector<double>>();
  model->kinetic_cubature.weights = Eigen::Map<Eigen::VectorXd>(w.data(), w.size());
  model->kinetic_cubature.training_error = cub.at("training_error");
  model->kinetic_cubature.saturated = cub.at("saturated");
  buildLinearRecon(*model);
  if (model->variant == ModelVariant::StVK) buildStvkGrad(*model);
  return model;
}

}  // namespace rdl

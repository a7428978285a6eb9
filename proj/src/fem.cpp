#include "rdl/fem.hpp"

#include <Eigen/Cholesky>

namespace rdl {

Eigen::VectorXd FemOperators::applyGradOp(const Eigen::VectorXd& positions) const {
  return grad_op * positions;
}

Eigen::VectorXd FemOperators::poissonReconstructPinned(const Eigen::VectorXd& vecF) const {
  const int d = dim, Vd = numVertices() * d;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(Vd);
  for (int j = 0; j < numElements(); ++j)
    x += poisson_cols[j] * vecF.segment(j * d * d, d * d);
  return x;
}

std::shared_ptr<FemOperators> assembleFem(const VolumetricMesh& mesh, double density,
                                          double young, double poisson) {
  if (density <= 0) throw AssemblyError("density must be positive");
  if (young <= 0) throw AssemblyError("Young's modulus must be positive");
  if (poisson < 0 || poisson >= 0.5) throw AssemblyError("Poisson ratio must be in [0, 0.5)");

  auto ops = std::make_shared<FemOperators>();
  const int d = mesh.dim, V = mesh.numVertices(), P = mesh.numElements();
  ops->dim = d;
  ops->density = density;
  ops->young = young;
  ops->poisson = poisson;
  ops->lame_mu = young / (2.0 * (1.0 + poisson));
  ops->lame_lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));

  ops->element_volume.resize(P);
  ops->vertex_mass = Eigen::VectorXd::Zero(V);
  std::vector<Eigen::Triplet<double>> gtrip, ktrip;
  for (int e = 0; e < P; ++e) {
    double vol = signedElementVolume(mesh, e);
    if (vol <= 0)
      throw AssemblyError("inverted element " + std::to_string(e));
    ops->element_volume[e] = vol;
    for (int k = 0; k <= d; ++k)
      ops->vertex_mass[mesh.elements(e, k)] += density * vol / (d + 1);

    Eigen::MatrixXd Dm(d, d);
    for (int c = 0; c < d; ++c)
      Dm.col(c) = (mesh.vertices.row(mesh.elements(e, c + 1)) -
                   mesh.vertices.row(mesh.elements(e, 0)))
                      .transpose();
    Eigen::MatrixXd DmInv = Dm.inverse();

    // F_{ab} = sum_c (x[v_{c+1},a] - x[v_0,a]) DmInv(c,b); vec(F) col-major.
    // Per-dof dF matrices double as the strain basis for the stiffness.
    const int ndof = d * (d + 1);
    std::vector<Eigen::MatrixXd> dF(ndof, Eigen::MatrixXd::Zero(d, d));
    for (int k = 0; k <= d; ++k)
      for (int a = 0; a < d; ++a) {
        Eigen::MatrixXd& m = dF[k * d + a];
        for (int b = 0; b < d; ++b) {
          if (k == 0)
            for (int c = 0; c < d; ++c) m(a, b) -= DmInv(c, b);
          else
            m(a, b) += DmInv(k - 1, b);
        }
      }
    for (int k = 0; k <= d; ++k) {
      int v = mesh.elements(e, k);
      for (int a = 0; a < d; ++a) {
        const Eigen::MatrixXd& m = dF[k * d + a];
        for (int b = 0; b < d; ++b)
          for (int r = 0; r < d; ++r)
            if (m(r, b) != 0.0)
              gtrip.emplace_back(e * d * d + b * d + r, v * d + a, m(r, b));
      }
    }
    // linear isotropic stiffness: K = vol (2 mu e1:e2 + lambda tr1 tr2)
    Eigen::MatrixXd Ke(ndof, ndof);
    std::vector<Eigen::MatrixXd> eps(ndof);
    std::vector<double> tr(ndof);
    for (int i = 0; i < ndof; ++i) {
      eps[i] = 0.5 * (dF[i] + dF[i].transpose());
      tr[i] = dF[i].trace();
    }
    for (int i = 0; i < ndof; ++i)
      for (int j = 0; j < ndof; ++j)
        Ke(i, j) = vol * (2.0 * ops->lame_mu * (eps[i].array() * eps[j].array()).sum() +
                          ops->lame_lambda * tr[i] * tr[j]);
    for (int i = 0; i < ndof; ++i)
      for (int j = 0; j < ndof; ++j)
        if (Ke(i, j) != 0.0)
          ktrip.emplace_back(mesh.elements(e, i / d) * d + i % d,
                             mesh.elements(e, j / d) * d + j % d, Ke(i, j));
  }
  ops->total_mass = ops->vertex_mass.sum();
  ops->avg_element_size = std::pow(mesh.rest_volume / P, 1.0 / d);

  ops->grad_op.resize(P * d * d, V * d);
  ops->grad_op.setFromTriplets(gtrip.begin(), gtrip.end());
  ops->stiffness_full.resize(V * d, V * d);
  ops->stiffness_full.setFromTriplets(ktrip.begin(), ktrip.end());

  // mass-weighted centroid
  ops->rest_centroid = Eigen::VectorXd::Zero(d);
  for (int v = 0; v < V; ++v)
    ops->rest_centroid += ops->vertex_mass[v] * mesh.vertices.row(v).transpose();
  ops->rest_centroid /= ops->total_mass;

  // Poisson normal matrix N = G^T W G + kappa C^T C, with C the mass-centroid
  // rows; kappa only conditions the pinning, the pinned solution is exact for
  // any kappa > 0.
  Eigen::VectorXd w(P * d * d);
  for (int e = 0; e < P; ++e) w.segment(e * d * d, d * d).setConstant(ops->element_volume[e]);
  Eigen::MatrixXd A = Eigen::MatrixXd(ops->grad_op.transpose() * w.asDiagonal() * ops->grad_op);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(d, V * d);
  for (int v = 0; v < V; ++v)
    for (int a = 0; a < d; ++a) C(a, v * d + a) = ops->vertex_mass[v] / ops->total_mass;
  double kappa = A.trace() / d;
  A += kappa * C.transpose() * C;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw AssemblyError("Poisson normal matrix not SPD");

  ops->poisson_cols.resize(P);
  Eigen::SparseMatrix<double> gT = ops->grad_op.transpose();
  for (int e = 0; e < P; ++e) {
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(V * d, d * d);
    for (int c = 0; c < d * d; ++c) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(gT, e * d * d + c); it; ++it)
        rhs(it.row(), c) = it.value() * ops->element_volume[e];
    }
    ops->poisson_cols[e] = llt.solve(rhs);
  }

  ops->rest_pinned.resize(V * d);
  for (int v = 0; v < V; ++v)
    for (int a = 0; a < d; ++a)
      ops->rest_pinned[v * d + a] = mesh.vertices(v, a) - ops->rest_centroid[a];
  return ops;
}

Eigen::VectorXd reconstructFromGradients(const FemOperators& ops,
                                         const Eigen::VectorXd& vecF,
                                         const Eigen::VectorXd& centroid) {
  Eigen::VectorXd x = ops.poissonReconstructPinned(vecF);
  const int d = ops.dim;
  for (int v = 0; v < ops.numVertices(); ++v) x.segment(v * d, d) += centroid;
  return x;
}

}  // namespace rdl

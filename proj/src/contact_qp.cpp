#include "rdl/contact_qp.hpp"

#include <cmath>

namespace rdl {

ContactProblem assembleContactProblem(const RsModel& model, const FrameCache& f0,
                                      const FrameCache& f1, const FrameCache& f2,
                                      const EnvironmentField& field,
                                      const std::vector<int>& active, double dt,
                                      const Eigen::VectorXd& dmp_target,
                                      const Eigen::VectorXd& gravity,
                                      const WeightSet& w) {
  ContactQuadratic cq =
      contactQuadratic(model, f0, f1, f2, field, active, dt, dmp_target, gravity, w);
  ContactProblem p;
  p.Q = std::move(cq.Q);
  p.b = std::move(cq.b);
  p.c0 = cq.c0;
  p.normals = std::move(cq.normals);
  p.mu = field.mu;
  p.dim = model.dim;
  return p;
}

namespace {

/// Per-contact orthonormal frame, normal first. With mu = 0 the cone collapses
/// to the normal ray and the tangential columns are dropped.
Eigen::MatrixXd contactBasis(const Eigen::VectorXd& n) {
  const int d = static_cast<int>(n.size());
  Eigen::MatrixXd B(d, d);
  B.col(0) = n;
  if (d == 2) {
    B.col(1) << -n[1], n[0];
  } else {
    Eigen::Vector3d nn = n, e = Eigen::Vector3d::UnitX();
    if (std::abs(nn.x()) > 0.9) e = Eigen::Vector3d::UnitY();
    Eigen::Vector3d t1 = nn.cross(e).normalized();
    B.col(1) = t1;
    B.col(2) = nn.cross(t1);
  }
  return B;
}

struct Barrier {
  double value = 0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  bool feasible = true;
};

/// Sum of -log barriers of the per-contact cones in local coordinates
/// (normal component first, then tangentials when mu > 0).
Barrier coneBarrier(const Eigen::VectorXd& x, int n, int per, double mu) {
  Barrier out;
  out.grad = Eigen::VectorXd::Zero(x.size());
  out.hess = Eigen::MatrixXd::Zero(x.size(), x.size());
  for (int j = 0; j < n; ++j) {
    const int o = j * per;
    const double p = x[o];
    if (per == 1) {
      if (p <= 0) {
        out.feasible = false;
        return out;
      }
      out.value -= std::log(p);
      out.grad[o] -= 1.0 / p;
      out.hess(o, o) += 1.0 / (p * p);
      continue;
    }
    Eigen::VectorXd y = x.segment(o + 1, per - 1);
    const double g = mu * mu * p * p - y.squaredNorm();
    if (p <= 0 || g <= 0) {
      out.feasible = false;
      return out;
    }
    out.value -= std::log(g);
    Eigen::VectorXd dg(per);
    dg[0] = 2.0 * mu * mu * p;
    dg.tail(per - 1) = -2.0 * y;
    out.grad.segment(o, per) -= dg / g;
    Eigen::MatrixXd d2g = Eigen::MatrixXd::Identity(per, per) * (-2.0);
    d2g(0, 0) = 2.0 * mu * mu;
    out.hess.block(o, o, per, per) += dg * dg.transpose() / (g * g) - d2g / g;
  }
  return out;
}

}  // namespace

ConeSolution solveConeQp(const ContactProblem& problem, const Eigen::MatrixXd* warm) {
  const int n = problem.contacts(), d = problem.dim;
  ConeSolution sol;
  sol.forces.resize(n, d);
  if (n == 0) return sol;
  const double mu = problem.mu;
  const int per = mu > 0 ? d : 1;
  const int m = n * per;

  // local coordinates: f_j = B_j x_j, normal component first
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n * d, m);
  for (int j = 0; j < n; ++j) {
    Eigen::MatrixXd Bj = contactBasis(problem.normals.row(j));
    B.block(j * d, j * per, d, per) = Bj.leftCols(per);
  }
  Eigen::MatrixXd Qx = B.transpose() * problem.Q * B;
  Eigen::VectorXd bx = B.transpose() * problem.b;
  {
    Eigen::LLT<Eigen::MatrixXd> llt(Qx);
    if (llt.info() != Eigen::Success)
      throw QpError("contact quadratic is not positive definite");
  }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(m);
  for (int j = 0; j < n; ++j) x[j * per] = 1.0;
  double t = 1.0;
  if (warm && warm->rows() == n && warm->cols() == d) {
    // a warm point sits near the large-t end of the central path, so the
    // barrier schedule resumes there instead of recentering from scratch
    t = 1e4;
    for (int j = 0; j < n; ++j) {
      Eigen::VectorXd f = warm->row(j);
      Eigen::MatrixXd Bj = contactBasis(problem.normals.row(j));
      Eigen::VectorXd lx = Bj.leftCols(per).transpose() * f;
      lx[0] = std::max(lx[0], 0.0) + 1e-6;
      if (per > 1) {
        double yn = lx.tail(per - 1).norm();
        if (yn >= mu * lx[0])
          lx.tail(per - 1) *=
              yn > 0 ? mu * lx[0] * (1.0 - 1e-6) / yn : 0.0;
      }
      x.segment(j * per, per) = lx;
    }
  }

  const double kkt_tol = 1e-8;
  for (int outer = 0; outer < 80; ++outer) {
    for (int newton = 0; newton < 100; ++newton) {
      Barrier bar = coneBarrier(x, n, per, mu);
      if (!bar.feasible) throw QpError("barrier iterate left the cone");
      Eigen::VectorXd g = t * (Qx * x + bx) + bar.grad;
      Eigen::MatrixXd H = t * Qx + bar.hess;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
      Eigen::VectorXd step = ldlt.solve(-g);
      double decrement = -0.5 * g.dot(step);
      ++sol.iters;
      if (decrement < 1e-12) break;

      double f0 = t * (0.5 * x.dot(Qx * x) + bx.dot(x)) + bar.value;
      double alpha = 1.0;
      for (int ls = 0; ls < 60; ++ls) {
        Eigen::VectorXd xn = x + alpha * step;
        Barrier bn = coneBarrier(xn, n, per, mu);
        if (bn.feasible) {
          double fn = t * (0.5 * xn.dot(Qx * xn) + bx.dot(xn)) + bn.value;
          if (fn <= f0 + 1e-4 * alpha * g.dot(step)) {
            x = xn;
            break;
          }
        }
        alpha *= 0.5;
        if (ls == 59) alpha = 0;  // no acceptable step, stay put
      }
      if (alpha == 0) break;
    }
    sol.kkt = static_cast<double>(n) / t;
    if (sol.kkt < kkt_tol) break;
    t *= 5.0;
  }

  Eigen::VectorXd f = B * x;
  for (int j = 0; j < n; ++j) sol.forces.row(j) = f.segment(j * d, d);
  sol.objective = 0.5 * f.dot(problem.Q * f) + problem.b.dot(f);
  return sol;
}

void updateActiveSet(const RsModel& model, Trajectory& traj,
                     const EnvironmentField& field, double eps1, double eps2) {
  const int K = traj.K(), dim = model.dim;
  const int V = model.fem->numVertices();
  traj.active.resize(K);
  traj.forces.resize(K);

  double fmax = 0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < traj.forces[i].rows(); ++j)
      fmax = std::max(fmax, traj.forces[i].row(j).norm());

  for (int i = 1; i + 1 < K; ++i) {
    Eigen::VectorXd x = reconstruct(model, traj.configs[i]);
    std::vector<int> kept;
    Eigen::MatrixXd forces;
    std::vector<Eigen::VectorXd> rows;
    for (int v = 0; v < V; ++v) {
      double fnorm = 0;
      Eigen::VectorXd frow = Eigen::VectorXd::Zero(dim);
      for (size_t j = 0; j < traj.active[i].size(); ++j)
        if (traj.active[i][j] == v) {
          frow = traj.forces[i].row(j);
          fnorm = frow.norm();
          break;
        }
      double dist = field.query(x.segment(v * dim, dim), 0).dist;
      if (dist > eps1 && fnorm <= eps2 * fmax) continue;
      kept.push_back(v);
      rows.push_back(frow);
    }
    traj.active[i] = kept;
    traj.forces[i].resize(static_cast<int>(rows.size()), dim);
    for (size_t j = 0; j < rows.size(); ++j) traj.forces[i].row(j) = rows[j];
  }
  traj.active[0].clear();
  traj.forces[0].resize(0, dim);
  traj.active[K - 1].clear();
  traj.forces[K - 1].resize(0, dim);
}

}  // namespace rdl

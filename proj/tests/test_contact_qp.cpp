#include <doctest.h>

#include <random>

#include "rdl/contact_qp.hpp"

using namespace rdl;

namespace {

struct Setup {
  VolumetricMesh mesh;
  std::shared_ptr<const FemOperators> fem;
  std::shared_ptr<RsModel> model;
  std::shared_ptr<EnvironmentField> ground;
  WeightSet weights;
};

Setup makeBar() {
  Setup s;
  MeshSpec spec;
  spec.shape = "bar2d";
  spec.sx = 1.0;
  spec.sy = 0.2;
  spec.nx = 10;
  spec.ny = 2;
  s.mesh = buildMesh(spec);
  s.fem = assembleFem(s.mesh, 1.0, 1e5, 0.48);
  s.model = buildRsBases(s.mesh, s.fem, 4);
  Obstacle ground;
  ground.kind = "half_plane";
  ground.normal = Eigen::Vector2d(0, 1);
  ground.offset = 0;
  Eigen::VectorXd lo(2), hi(2);
  lo << -4, -4;
  hi << 4, 4;
  Eigen::VectorXi res(2);
  res << 16, 16;
  s.ground = buildField({ground}, lo, hi, res, EnvType::Ground);
  s.weights = WeightSet::defaults(s.fem->avg_element_size);
  return s;
}

ContactProblem randomProblem(int n, int dim, double mu, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0, 1);
  const int m = n * dim;
  Eigen::MatrixXd A(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) A(i, j) = g(rng);
  ContactProblem p;
  p.Q = A.transpose() * A + 0.5 * Eigen::MatrixXd::Identity(m, m);
  p.b.resize(m);
  for (int i = 0; i < m; ++i) p.b[i] = g(rng);
  p.normals.resize(n, dim);
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXd nr(dim);
    for (int a = 0; a < dim; ++a) nr[a] = g(rng);
    nr[dim - 1] = std::abs(nr[dim - 1]) + 0.5;
    p.normals.row(j) = nr.normalized();
  }
  p.mu = mu;
  p.dim = dim;
  return p;
}

void checkFeasible(const ContactProblem& p, const Eigen::MatrixXd& forces) {
  for (int j = 0; j < p.contacts(); ++j) {
    Eigen::VectorXd f = forces.row(j), n = p.normals.row(j);
    double fperp = n.dot(f);
    double fpar = (f - fperp * n).norm();
    CHECK(fperp >= -1e-10);
    CHECK(fpar <= p.mu * fperp + 1e-8);
  }
}

}  // namespace

TEST_CASE("empty contact set yields a vacuous solution") {
  ContactProblem p;
  p.normals.resize(0, 2);
  p.Q.resize(0, 0);
  p.b.resize(0);
  ConeSolution sol = solveConeQp(p);
  CHECK(sol.forces.rows() == 0);
  CHECK(sol.objective == 0.0);
}

TEST_CASE("single contact under a pure normal pull matches the 1-d optimum") {
  for (double mu : {0.7, 0.0}) {
    ContactProblem p;
    p.dim = 2;
    p.normals.resize(1, 2);
    p.normals << 0, 1;
    p.mu = mu;
    const double q = 2.0, pull = 3.0;
    p.Q = q * Eigen::MatrixXd::Identity(2, 2);
    p.b = -pull * Eigen::Vector2d(0, 1);
    ConeSolution sol = solveConeQp(p);
    CHECK(sol.forces(0, 1) == doctest::Approx(pull / q).epsilon(1e-6));
    CHECK(std::abs(sol.forces(0, 0)) < 1e-7);
    CHECK(sol.kkt < 1e-8);
    checkFeasible(p, sol.forces);
  }
}

TEST_CASE("frictionless contacts carry no tangential force") {
  ContactProblem p;
  p.dim = 2;
  p.normals.resize(1, 2);
  p.normals << 0, 1;
  p.mu = 0.0;
  p.Q = Eigen::MatrixXd::Identity(2, 2);
  p.b = Eigen::Vector2d(-5.0, -1.0);  // strong tangential pull
  ConeSolution sol = solveConeQp(p);
  CHECK(std::abs(sol.forces(0, 0)) < 1e-12);
  CHECK(sol.forces(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("solver beats a monte-carlo sweep of cone-feasible points") {
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> up(0.0, 3.0), ut(-1.0, 1.0);
  for (unsigned seed : {1u, 2u, 3u}) {
    ContactProblem p = randomProblem(3, 2, 0.7, seed);
    ConeSolution sol = solveConeQp(p);
    checkFeasible(p, sol.forces);
    double best = 0;  // zero force is feasible
    for (int trial = 0; trial < 100000; ++trial) {
      Eigen::VectorXd f(6);
      for (int j = 0; j < 3; ++j) {
        Eigen::Vector2d n = p.normals.row(j), t(-n[1], n[0]);
        double fp = up(rng);
        double ft = ut(rng) * p.mu * fp;
        f.segment(j * 2, 2) = fp * n + ft * t;
      }
      best = std::min(best, 0.5 * f.dot(p.Q * f) + p.b.dot(f));
    }
    CHECK(sol.objective <= best + 1e-6 * (1 + std::abs(best)));
    CHECK(sol.objective <= 1e-10);  // descent vs the zero-force point
  }
}

TEST_CASE("repeated solves are bitwise deterministic") {
  ContactProblem p = randomProblem(3, 2, 0.7, 7);
  ConeSolution a = solveConeQp(p);
  ConeSolution b = solveConeQp(p);
  CHECK(a.forces == b.forces);
  CHECK(a.iters == b.iters);
}

TEST_CASE("warm starts do not cost more newton iterations in aggregate") {
  int cold = 0, warm = 0;
  for (unsigned seed : {11u, 12u, 13u, 14u, 15u}) {
    ContactProblem p = randomProblem(2, 2, 0.7, seed);
    ConeSolution base = solveConeQp(p);
    ContactProblem q = p;
    q.b *= 1.01;
    cold += solveConeQp(q).iters;
    warm += solveConeQp(q, &base.forces).iters;
    checkFeasible(q, solveConeQp(q, &base.forces).forces);
  }
  CHECK(warm <= cold);
}

TEST_CASE("assembled problems are positive definite with unit normals") {
  Setup s = makeBar();
  ReducedConfig q = ReducedConfig::zero(s.model->r, 2);
  FrameCache f = makeFrameCache(*s.model, q);
  std::vector<int> active = {0, 1, 11};
  ContactProblem p =
      assembleContactProblem(*s.model, f, f, f, *s.ground, active, 0.05,
                             Eigen::VectorXd(), Eigen::Vector2d(0, -9.81), s.weights);
  CHECK(p.contacts() == 3);
  CHECK(p.mu == s.ground->mu);
  for (int j = 0; j < 3; ++j)
    CHECK(p.normals.row(j).norm() == doctest::Approx(1.0).epsilon(1e-12));
  Eigen::LLT<Eigen::MatrixXd> llt(p.Q);
  CHECK(llt.info() == Eigen::Success);
  CHECK(p.Q.allFinite());
  ConeSolution sol = solveConeQp(p);
  checkFeasible(p, sol.forces);
}

TEST_CASE("active set refresh follows the distance and force rules") {
  Setup s = makeBar();
  const double eps1 = s.weights.eps1, eps2 = s.weights.eps2;

  Trajectory traj;
  traj.dt = 0.05;
  for (int k = 0; k < 4; ++k) {
    ReducedConfig q = ReducedConfig::zero(s.model->r, 2);
    q.c << 0, 2.0;  // far above the ground
    traj.configs.push_back(q);
  }
  traj.active.assign(4, {});
  traj.forces.assign(4, Eigen::MatrixXd(0, 2));
  updateActiveSet(*s.model, traj, *s.ground, eps1, eps2);
  for (int i = 0; i < 4; ++i) CHECK(traj.active[i].empty());

  // a far vertex holding the maximal force stays in the set
  traj.active[1] = {5};
  traj.forces[1].resize(1, 2);
  traj.forces[1] << 0, 2.5;
  updateActiveSet(*s.model, traj, *s.ground, eps1, eps2);
  CHECK(traj.active[1] == std::vector<int>{5});
  CHECK(traj.forces[1].row(0).norm() == doctest::Approx(2.5));

  // touching vertices are always included, with zero initial force
  Trajectory low;
  low.dt = 0.05;
  double ymin = 1e9;
  for (int v = 0; v < s.mesh.numVertices(); ++v)
    ymin = std::min(ymin, s.mesh.vertices(v, 1));
  for (int k = 0; k < 4; ++k) {
    ReducedConfig q = ReducedConfig::zero(s.model->r, 2);
    q.c << 0, -ymin;  // bottom row exactly on the surface
    low.configs.push_back(q);
  }
  low.active.assign(4, {});
  low.forces.assign(4, Eigen::MatrixXd(0, 2));
  updateActiveSet(*s.model, low, *s.ground, eps1, eps2);
  CHECK(!low.active[1].empty());
  CHECK(low.forces[1].rows() == static_cast<int>(low.active[1].size()));
  CHECK(low.forces[1].norm() == 0.0);
  for (int v : low.active[1]) {
    Eigen::VectorXd x = reconstruct(*s.model, low.configs[1]);
    CHECK(x[v * 2 + 1] <= eps1 + 1e-9);
  }
  CHECK(low.active[0].empty());
  CHECK(low.active[3].empty());
}

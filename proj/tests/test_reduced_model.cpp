#include <doctest.h>

#include <random>

#include "rdl/reduced_model.hpp"

using namespace rdl;

namespace {

struct Setup {
  VolumetricMesh mesh;
  std::shared_ptr<const FemOperators> fem;
  std::shared_ptr<RsModel> model;
};

Setup makeBarRs(int r = 4) {
  Setup s;
  MeshSpec spec;
  spec.shape = "bar2d";
  spec.sx = 1.0;
  spec.sy = 0.2;
  spec.nx = 10;
  spec.ny = 2;
  s.mesh = buildMesh(spec);
  s.fem = assembleFem(s.mesh, 1.0, 1e5, 0.48);
  s.model = buildRsBases(s.mesh, s.fem, r);
  return s;
}

ReducedConfig randomConfig(const RsModel& m, unsigned seed, double u_scale) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0, 1);
  ReducedConfig q = ReducedConfig::zero(m.r, m.dim);
  for (int i = 0; i < m.r; ++i) q.u[i] = u_scale * g(rng);
  for (int i = 0; i < m.dim; ++i) q.c[i] = 0.3 * g(rng);
  for (int i = 0; i < m.rotDimLocal(); ++i) q.w[i] = 0.8 * g(rng);
  return q;
}

Eigen::VectorXd restFlat(const Setup& s) {
  Eigen::VectorXd x(s.mesh.numVertices() * s.mesh.dim);
  for (int v = 0; v < s.mesh.numVertices(); ++v)
    for (int a = 0; a < s.mesh.dim; ++a) x[v * s.mesh.dim + a] = s.mesh.vertices(v, a);
  return x;
}

}  // namespace

TEST_CASE("q = 0 reconstructs rest positions for all variants") {
  Setup s = makeBarRs();
  ReducedConfig q0 = ReducedConfig::zero(s.model->r, 2);
  CHECK((reconstruct(*s.model, q0) - restFlat(s)).cwiseAbs().maxCoeff() < 1e-9);
  for (ModelVariant v : {ModelVariant::LMA, ModelVariant::StVK}) {
    auto lin = buildLinearModel(s.mesh, s.fem, 4, v);
    CHECK((reconstruct(*lin, q0) - restFlat(s)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("pure translation shifts rest positions") {
  Setup s = makeBarRs();
  ReducedConfig q = ReducedConfig::zero(s.model->r, 2);
  q.c << 0.7, -0.2;
  Eigen::VectorXd x = reconstruct(*s.model, q);
  Eigen::VectorXd expect = restFlat(s);
  for (int v = 0; v < s.mesh.numVertices(); ++v) {
    expect[v * 2] += 0.7;
    expect[v * 2 + 1] += -0.2;
  }
  CHECK((x - expect).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("subspace size validation") {
  Setup s = makeBarRs();
  CHECK_THROWS_AS(buildRsBases(s.mesh, s.fem, 0), PrecomputeError);
  CHECK_THROWS_AS(buildRsBases(s.mesh, s.fem, 1000), PrecomputeError);
}

TEST_CASE("first retained mode is softer than later ones") {
  Setup s = makeBarRs(4);
  for (int k = 1; k < 4; ++k)
    CHECK(s.model->stiffness_eigs[0] <= s.model->stiffness_eigs[k]);
  CHECK(s.model->stiffness_eigs[0] > 0);
  // first bar mode is bending: deforms y strongly relative to x stretch
  ReducedConfig q = ReducedConfig::zero(4, 2);
  q.u[0] = 0.02;
  Eigen::VectorXd x = reconstruct(*s.model, q);
  Eigen::VectorXd dx = x - restFlat(s);
  double move_y = 0, move_x = 0;
  for (int v = 0; v < s.mesh.numVertices(); ++v) {
    move_x += dx[v * 2] * dx[v * 2];
    move_y += dx[v * 2 + 1] * dx[v * 2 + 1];
  }
  CHECK(move_y > move_x);
}

TEST_CASE("jacobian matches central finite differences") {
  Setup s = makeBarRs();
  ReducedConfig q = randomConfig(*s.model, 5, 0.01);
  Eigen::MatrixXd J = jacobian(*s.model, q);

  // translation columns are stacked identities
  for (int v = 0; v < s.mesh.numVertices(); ++v) {
    CHECK(J(v * 2, s.model->r) == doctest::Approx(1.0));
    CHECK(J(v * 2 + 1, s.model->r) == doctest::Approx(0.0));
  }

  Eigen::VectorXd qs = q.stacked();
  const double h = 1e-6;
  for (int i = 0; i < s.model->numQ(); ++i) {
    Eigen::VectorXd qp = qs, qm = qs;
    qp[i] += h;
    qm[i] -= h;
    Eigen::VectorXd fp = reconstruct(*s.model, ReducedConfig::fromStacked(qp, s.model->r, 2));
    Eigen::VectorXd fm = reconstruct(*s.model, ReducedConfig::fromStacked(qm, s.model->r, 2));
    Eigen::VectorXd fd = (fp - fm) / (2 * h);
    double denom = std::max(1.0, fd.norm());
    CHECK((J.col(i) - fd).norm() / denom < 1e-5);
  }
}

TEST_CASE("hessian contractions match second-order finite differences") {
  Setup s = makeBarRs();
  ReducedConfig q = randomConfig(*s.model, 9, 0.01);
  std::mt19937 rng(31);
  std::normal_distribution<double> g(0, 1);
  const int nq = s.model->numQ();
  Eigen::VectorXd d1(nq), d2(nq);
  for (int i = 0; i < nq; ++i) {
    d1[i] = g(rng);
    d2[i] = g(rng);
  }
  Eigen::VectorXd qs = q.stacked();
  const double h = 1e-4;
  auto rec = [&](const Eigen::VectorXd& qq) {
    return reconstruct(*s.model, ReducedConfig::fromStacked(qq, s.model->r, 2));
  };
  Eigen::VectorXd fd = (rec(qs + h * d1 + h * d2) - rec(qs + h * d1 - h * d2) -
                        rec(qs - h * d1 + h * d2) + rec(qs - h * d1 - h * d2)) /
                       (4 * h * h);

  SUBCASE("two-direction contraction") {
    Eigen::VectorXd hv = hessianQuadVec(*s.model, q, d1, d2);
    CHECK((hv - fd).norm() / std::max(1.0, fd.norm()) < 1e-4);
  }
  SUBCASE("left contraction agrees with quad-vec") {
    std::mt19937 rng2(77);
    Eigen::VectorXd z(s.mesh.numVertices() * 2);
    for (int i = 0; i < z.size(); ++i) z[i] = g(rng2);
    Eigen::MatrixXd H = hessContractLeft(*s.model, q, z);
    double a = d1.dot(H * d2);
    double b = z.dot(hessianQuadVec(*s.model, q, d1, d2));
    CHECK(a == doctest::Approx(b).epsilon(1e-8));
    CHECK((H - H.transpose()).cwiseAbs().maxCoeff() < 1e-9 * (1 + H.norm()));
  }
}

TEST_CASE("rigid invariance: rotation and translation compose exactly") {
  Setup s = makeBarRs();
  ReducedConfig q = randomConfig(*s.model, 13, 0.02);
  ReducedConfig q_local = q;
  q_local.c.setZero();
  q_local.w.setZero();
  Eigen::VectorXd x_local = reconstruct(*s.model, q_local);
  Eigen::MatrixXd R = expRot(2, q.w, 0).R;
  Eigen::VectorXd cen = s.fem->rest_centroid;
  Eigen::VectorXd expect(x_local.size());
  for (int v = 0; v < s.mesh.numVertices(); ++v)
    expect.segment(v * 2, 2) = R * (x_local.segment(v * 2, 2) - cen) + cen + q.c;
  CHECK((reconstruct(*s.model, q) - expect).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("non-finite configs rejected") {
  Setup s = makeBarRs();
  ReducedConfig q = ReducedConfig::zero(s.model->r, 2);
  q.u[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(reconstruct(*s.model, q), std::invalid_argument);
}

TEST_CASE("kinetic cubature meets training target and generalizes") {
  Setup s = makeBarRs(4);
  auto train = samplePoses(*s.model, 120, 0.1, 42);
  CHECK_THROWS_AS(trainKineticCubature(*s.model, {train[0]}, 1e-2), PrecomputeError);
  Cubature cub = trainKineticCubature(*s.model, train, 1e-2);
  CHECK(!cub.saturated);
  CHECK(cub.training_error <= 1e-2);
  CHECK(cub.weights.minCoeff() >= 0);
  CHECK(static_cast<int>(cub.items.size()) < s.mesh.numElements() * 3 / 10);

  // held-out poses: cubature vs full reconstruction, max vertex error < 2% of l
  auto held = samplePoses(*s.model, 100, 0.1, 4242);
  double worst = 0;
  for (const auto& u : held) {
    ReducedConfig q = ReducedConfig::zero(4, 2);
    q.u = u;
    Eigen::VectorXd full = reconstruct(*s.model, q, EvalMode::Full);
    Eigen::VectorXd fast = reconstruct(*s.model, q, EvalMode::Cubature);
    for (int v = 0; v < s.mesh.numVertices(); ++v)
      worst = std::max(worst, (full.segment(v * 2, 2) - fast.segment(v * 2, 2)).norm());
  }
  CHECK(worst < 0.02 * s.fem->avg_element_size);

  // cubature derivatives stay consistent with cubature reconstruction
  ReducedConfig q = ReducedConfig::zero(4, 2);
  q.u = held[0];
  Eigen::MatrixXd J = jacobian(*s.model, q, EvalMode::Cubature);
  Eigen::VectorXd qs = q.stacked();
  const double h = 1e-6;
  for (int i = 0; i < s.model->numQ(); ++i) {
    Eigen::VectorXd qp = qs, qm = qs;
    qp[i] += h;
    qm[i] -= h;
    Eigen::VectorXd fd =
        (reconstruct(*s.model, ReducedConfig::fromStacked(qp, 4, 2), EvalMode::Cubature) -
         reconstruct(*s.model, ReducedConfig::fromStacked(qm, 4, 2), EvalMode::Cubature)) /
        (2 * h);
    CHECK((J.col(i) - fd).norm() / std::max(1.0, fd.norm()) < 1e-5);
  }
}

TEST_CASE("cubature with target 0 saturates to near-exact training fit") {
  Setup s = makeBarRs(3);
  auto train = samplePoses(*s.model, 100, 0.5, 7);
  Cubature cub = trainKineticCubature(*s.model, train, 0.0);
  CHECK(cub.training_error < 1e-9);
}

TEST_CASE("LMA jacobian w.r.t. u is constant") {
  Setup s = makeBarRs();
  auto lin = buildLinearModel(s.mesh, s.fem, 4, ModelVariant::LMA);
  ReducedConfig qa = randomConfig(*lin, 3, 0.05);
  ReducedConfig qb = randomConfig(*lin, 4, 0.05);
  qb.c = qa.c;
  qb.w = qa.w;
  Eigen::MatrixXd Ja = jacobian(*lin, qa).leftCols(4);
  Eigen::MatrixXd Jb = jacobian(*lin, qb).leftCols(4);
  CHECK((Ja - Jb).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("linear-model jacobian and hessian match finite differences") {
  Setup s = makeBarRs();
  auto lin = buildLinearModel(s.mesh, s.fem, 4, ModelVariant::LMA);
  ReducedConfig q = randomConfig(*lin, 21, 0.05);
  Eigen::MatrixXd J = jacobian(*lin, q);
  Eigen::VectorXd qs = q.stacked();
  const double h = 1e-6;
  for (int i = 0; i < lin->numQ(); ++i) {
    Eigen::VectorXd qp = qs, qm = qs;
    qp[i] += h;
    qm[i] -= h;
    Eigen::VectorXd fd = (reconstruct(*lin, ReducedConfig::fromStacked(qp, 4, 2)) -
                          reconstruct(*lin, ReducedConfig::fromStacked(qm, 4, 2))) /
                         (2 * h);
    CHECK((J.col(i) - fd).norm() / std::max(1.0, fd.norm()) < 1e-5);
  }
  std::mt19937 rng(5);
  std::normal_distribution<double> g(0, 1);
  Eigen::VectorXd d1(lin->numQ()), d2(lin->numQ());
  for (int i = 0; i < lin->numQ(); ++i) {
    d1[i] = g(rng);
    d2[i] = g(rng);
  }
  const double h2 = 1e-4;
  auto rec = [&](const Eigen::VectorXd& qq) {
    return reconstruct(*lin, ReducedConfig::fromStacked(qq, 4, 2));
  };
  Eigen::VectorXd fd2 = (rec(qs + h2 * (d1 + d2)) - rec(qs + h2 * (d1 - d2)) -
                         rec(qs + h2 * (d2 - d1)) + rec(qs - h2 * (d1 + d2))) /
                        (4 * h2 * h2);
  Eigen::VectorXd hv = hessianQuadVec(*lin, q, d1, d2);
  CHECK((hv - fd2).norm() / std::max(1.0, fd2.norm()) < 1e-4);
}

TEST_CASE("StVK potential gradient and hessian match finite differences") {
  Setup s = makeBarRs();
  auto lin = buildLinearModel(s.mesh, s.fem, 4, ModelVariant::StVK);
  std::mt19937 rng(12);
  std::normal_distribution<double> g(0, 1);
  Eigen::VectorXd u(4);
  for (int i = 0; i < 4; ++i) u[i] = 0.01 * g(rng);
  PotentialEval pe = potential(*lin, u);
  const double h = 1e-6;
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd up = u, um = u;
    up[i] += h;
    um[i] -= h;
    double fd = (potential(*lin, up, 0).value - potential(*lin, um, 0).value) / (2 * h);
    CHECK(pe.grad[i] == doctest::Approx(fd).epsilon(1e-6));
    Eigen::VectorXd fg = (potential(*lin, up, 1).grad - potential(*lin, um, 1).grad) / (2 * h);
    CHECK((pe.hess.col(i) - fg).norm() / std::max(1.0, fg.norm()) < 1e-5);
  }
}

TEST_CASE("quadratic potential matches eigenvalues") {
  Setup s = makeBarRs(3);
  Eigen::VectorXd u(3);
  u << 0.1, -0.2, 0.05;
  PotentialEval pe = potential(*s.model, u);
  double expect = 0.5 * (s.model->stiffness_eigs.array() * u.array().square()).sum();
  CHECK(pe.value == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("pose sampling is deterministic for a fixed seed") {
  Setup s = makeBarRs(3);
  auto a = samplePoses(*s.model, 5, 1.0, 99);
  auto b = samplePoses(*s.model, 5, 1.0, 99);
  for (int i = 0; i < 5; ++i) CHECK((a[i] - b[i]).cwiseAbs().maxCoeff() == 0.0);
  auto c = samplePoses(*s.model, 5, 1.0, 100);
  CHECK((a[0] - c[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("model JSON round trip preserves evaluation") {
  Setup s = makeBarRs(4);
  trainKineticCubature(*s.model, samplePoses(*s.model, 100, 0.1, 1), 1e-2);
  auto back = modelFromJson(modelToJson(*s.model), s.fem);
  ReducedConfig q = randomConfig(*s.model, 2, 0.02);
  CHECK((reconstruct(*back, q) - reconstruct(*s.model, q)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((reconstruct(*back, q, EvalMode::Cubature) -
         reconstruct(*s.model, q, EvalMode::Cubature))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

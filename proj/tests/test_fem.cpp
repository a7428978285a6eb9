#include <doctest.h>

#include <random>

#include "rdl/fem.hpp"
#include "rdl/mesh.hpp"

using namespace rdl;

namespace {
VolumetricMesh bar() {
  MeshSpec s;
  s.shape = "bar2d";
  s.sx = 1.0;
  s.sy = 0.2;
  s.nx = 10;
  s.ny = 2;
  return buildMesh(s);
}

Eigen::VectorXd flatRest(const VolumetricMesh& m) {
  Eigen::VectorXd x(m.numVertices() * m.dim);
  for (int v = 0; v < m.numVertices(); ++v)
    for (int a = 0; a < m.dim; ++a) x[v * m.dim + a] = m.vertices(v, a);
  return x;
}
}  // namespace

TEST_CASE("total lumped mass equals density times volume") {
  VolumetricMesh m = bar();
  auto ops = assembleFem(m, 1.0, 1e5, 0.48);
  CHECK(ops->total_mass == doctest::Approx(m.rest_volume).epsilon(1e-12));
  CHECK(ops->vertex_mass.minCoeff() > 0);
}

TEST_CASE("avg element size follows (vol/P)^(1/dim)") {
  // vol=8, P=64, dim=3 -> l=0.5
  MeshSpec s;
  s.shape = "beam3d";
  s.sx = s.sy = s.sz = 2.0;
  // 6 tets per cell; need 64 elements but the builder emits 6 per cell, so
  // check the formula directly on whatever P results and on the documented case
  s.nx = s.ny = s.nz = 2;
  VolumetricMesh m = buildMesh(s);
  auto ops = assembleFem(m, 1.0, 1e5, 0.3);
  CHECK(ops->avg_element_size ==
        doctest::Approx(std::pow(m.rest_volume / m.numElements(), 1.0 / 3.0)));
  CHECK(std::pow(8.0 / 64.0, 1.0 / 3.0) == doctest::Approx(0.5));

  // l scales linearly with uniform scaling
  MeshSpec s2 = s;
  s2.sx = s2.sy = s2.sz = 4.0;
  auto ops2 = assembleFem(buildMesh(s2), 1.0, 1e5, 0.3);
  CHECK(ops2->avg_element_size == doctest::Approx(2.0 * ops->avg_element_size).epsilon(1e-9));
}

TEST_CASE("invalid material parameters are rejected") {
  VolumetricMesh m = bar();
  CHECK_THROWS_AS(assembleFem(m, -1.0, 1e5, 0.3), AssemblyError);
  CHECK_THROWS_AS(assembleFem(m, 1.0, 0.0, 0.3), AssemblyError);
  CHECK_THROWS_AS(assembleFem(m, 1.0, 1e5, 0.5), AssemblyError);
}

TEST_CASE("inverted element reported by index") {
  VolumetricMesh m = bar();
  std::swap(m.elements(3, 0), m.elements(3, 1));
  try {
    assembleFem(m, 1.0, 1e5, 0.3);
    FAIL("expected assembly error");
  } catch (const AssemblyError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("grad_op of rest positions is identity per element") {
  VolumetricMesh m = bar();
  auto ops = assembleFem(m, 1.0, 1e5, 0.48);
  Eigen::VectorXd vecF = ops->applyGradOp(flatRest(m));
  for (int e = 0; e < m.numElements(); ++e) {
    Eigen::Map<Eigen::Matrix2d> F(vecF.data() + e * 4);
    CHECK((F - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("poisson reconstruction round trip") {
  VolumetricMesh m = bar();
  auto ops = assembleFem(m, 1.0, 1e5, 0.48);
  const int n = m.numVertices() * 2;

  SUBCASE("identity gradients, rest centroid -> rest positions") {
    Eigen::VectorXd vecF(m.numElements() * 4);
    for (int e = 0; e < m.numElements(); ++e) {
      Eigen::Map<Eigen::Matrix2d> F(vecF.data() + e * 4);
      F = Eigen::Matrix2d::Identity();
    }
    Eigen::VectorXd x = reconstructFromGradients(*ops, vecF, ops->rest_centroid);
    CHECK((x - flatRest(m)).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("uniform 2x scaling about centroid") {
    Eigen::VectorXd vecF(m.numElements() * 4);
    for (int e = 0; e < m.numElements(); ++e) {
      Eigen::Map<Eigen::Matrix2d> F(vecF.data() + e * 4);
      F = 2.0 * Eigen::Matrix2d::Identity();
    }
    Eigen::VectorXd x = reconstructFromGradients(*ops, vecF, ops->rest_centroid);
    Eigen::VectorXd expect = flatRest(m);
    for (int v = 0; v < m.numVertices(); ++v)
      expect.segment(v * 2, 2) =
          ops->rest_centroid + 2.0 * (expect.segment(v * 2, 2) - ops->rest_centroid);
    CHECK((x - expect).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("random compatible gradients recover deformed vertices") {
    std::mt19937 rng(7);
    std::normal_distribution<double> g(0.0, 0.05);
    Eigen::VectorXd y = flatRest(m);
    for (int i = 0; i < n; ++i) y[i] += g(rng);
    Eigen::VectorXd vecF = ops->applyGradOp(y);
    // centroid of y
    Eigen::VectorXd cen = Eigen::VectorXd::Zero(2);
    for (int v = 0; v < m.numVertices(); ++v)
      cen += ops->vertex_mass[v] * y.segment(v * 2, 2);
    cen /= ops->total_mass;
    Eigen::VectorXd x = reconstructFromGradients(*ops, vecF, cen);
    double rel = (x - y).norm() / y.norm();
    CHECK(rel < 1e-9);
  }
}

TEST_CASE("reconstruction output has requested centroid") {
  VolumetricMesh m = bar();
  auto ops = assembleFem(m, 1.0, 1e5, 0.48);
  std::mt19937 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd vecF(m.numElements() * 4);
  for (int i = 0; i < vecF.size(); ++i) vecF[i] = g(rng);
  Eigen::VectorXd target(2);
  target << 0.3, -0.7;
  Eigen::VectorXd x = reconstructFromGradients(*ops, vecF, target);
  Eigen::VectorXd cen = Eigen::VectorXd::Zero(2);
  for (int v = 0; v < m.numVertices(); ++v)
    cen += ops->vertex_mass[v] * x.segment(v * 2, 2);
  cen /= ops->total_mass;
  CHECK((cen - target).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("stiffness is symmetric PSD with rigid null space") {
  VolumetricMesh m = bar();
  auto ops = assembleFem(m, 1.0, 1e5, 0.48);
  Eigen::MatrixXd K = Eigen::MatrixXd(ops->stiffness_full);
  CHECK((K - K.transpose()).cwiseAbs().maxCoeff() < 1e-9);
  // translations: zero energy
  Eigen::VectorXd tx = Eigen::VectorXd::Zero(K.rows());
  for (int v = 0; v < m.numVertices(); ++v) tx[v * 2] = 1.0;
  CHECK(std::abs(tx.dot(K * tx)) < 1e-8 * K.norm());
  // infinitesimal rotation about centroid: zero energy for linear elasticity
  Eigen::VectorXd rot(K.rows());
  for (int v = 0; v < m.numVertices(); ++v) {
    double dx = m.vertices(v, 0) - ops->rest_centroid[0];
    double dy = m.vertices(v, 1) - ops->rest_centroid[1];
    rot[v * 2] = -dy;
    rot[v * 2 + 1] = dx;
  }
  CHECK(std::abs(rot.dot(K * rot)) < 1e-8 * K.norm());
}

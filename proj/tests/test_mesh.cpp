#include <doctest.h>

#include "rdl/mesh.hpp"

using namespace rdl;

namespace {
MeshSpec barSpec() {
  MeshSpec s;
  s.shape = "bar2d";
  s.sx = 1.0;
  s.sy = 0.2;
  s.nx = 10;
  s.ny = 2;
  return s;
}
}  // namespace

TEST_CASE("2D bar 10x2 grid has 33 vertices and 40 triangles") {
  VolumetricMesh m = buildMesh(barSpec());
  CHECK(m.numVertices() == 33);
  CHECK(m.numElements() == 40);
  CHECK(m.rest_volume == doctest::Approx(0.2).epsilon(1e-12));
  validateMesh(m);
}

TEST_CASE("3D beam bounding box matches requested size") {
  MeshSpec s;
  s.shape = "beam3d";
  s.sx = 0.2;
  s.sy = 2.0;
  s.sz = 0.2;
  s.nx = 2;
  s.ny = 8;
  s.nz = 2;
  VolumetricMesh m = buildMesh(s);
  validateMesh(m);
  Eigen::VectorXd lo = m.vertices.colwise().minCoeff();
  Eigen::VectorXd hi = m.vertices.colwise().maxCoeff();
  CHECK((hi - lo)(0) == doctest::Approx(0.2));
  CHECK((hi - lo)(1) == doctest::Approx(2.0));
  CHECK((hi - lo)(2) == doctest::Approx(0.2));
  CHECK(m.rest_volume == doctest::Approx(0.2 * 2.0 * 0.2).epsilon(1e-10));
}

TEST_CASE("degenerate specs are rejected") {
  MeshSpec s = barSpec();
  s.nx = 0;
  CHECK_THROWS_AS(buildMesh(s), InvalidSpecError);
  s = barSpec();
  s.sx = -1.0;
  CHECK_THROWS_AS(buildMesh(s), InvalidSpecError);
  s = barSpec();
  s.shape = "nonsense";
  CHECK_THROWS_AS(buildMesh(s), InvalidSpecError);
  MeshSpec ring;
  ring.shape = "ring2d";
  ring.r_inner = 0.6;  // inner >= outer
  ring.r_outer = 0.5;
  CHECK_THROWS_AS(buildMesh(ring), InvalidSpecError);
}

TEST_CASE("every element has positive signed volume") {
  for (const char* shape : {"bar2d", "ring2d", "beam3d", "cross3d"}) {
    MeshSpec s;
    s.shape = shape;
    VolumetricMesh m = buildMesh(s);
    for (int e = 0; e < m.numElements(); ++e) CHECK(signedElementVolume(m, e) > 0);
  }
}

TEST_CASE("surface patches are outward oriented and cover the boundary") {
  for (const char* shape : {"bar2d", "ring2d", "beam3d", "cross3d"}) {
    MeshSpec s;
    s.shape = shape;
    VolumetricMesh m = buildMesh(s);
    validateMesh(m);  // includes the outward-normal and coverage checks
    CHECK(m.numSurfacePatches() > 0);
  }
}

TEST_CASE("ring mesh is an annulus") {
  MeshSpec s;
  s.shape = "ring2d";
  s.r_outer = 0.5;
  s.r_inner = 0.3;
  s.na = 16;
  s.nr = 2;
  VolumetricMesh m = buildMesh(s);
  validateMesh(m);
  for (int v = 0; v < m.numVertices(); ++v) {
    double rad = m.vertices.row(v).norm();
    CHECK(rad >= 0.3 - 1e-12);
    CHECK(rad <= 0.5 + 1e-12);
  }
  double expected = M_PI * (0.25 - 0.09);
  CHECK(m.rest_volume == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("offset translates the mesh") {
  MeshSpec s = barSpec();
  s.offset = Eigen::Vector3d(0.5, 1.0, 0.0);
  VolumetricMesh moved = buildMesh(s);
  VolumetricMesh base = buildMesh(barSpec());
  Eigen::VectorXd d = meshCentroid(moved) - meshCentroid(base);
  CHECK(d(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d(1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("JSON round trip preserves the mesh") {
  VolumetricMesh m = buildMesh(barSpec());
  VolumetricMesh back = meshFromJson(meshToJson(m));
  CHECK(back.dim == m.dim);
  CHECK(back.numVertices() == m.numVertices());
  CHECK(back.numElements() == m.numElements());
  CHECK((back.vertices - m.vertices).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK((back.elements - m.elements).cwiseAbs().maxCoeff() == 0);
  CHECK((back.surface - m.surface).cwiseAbs().maxCoeff() == 0);
  CHECK(back.rest_volume == doctest::Approx(m.rest_volume).epsilon(1e-14));
}
